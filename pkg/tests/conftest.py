"""Shared factories for messages, records, and windows."""

from __future__ import annotations

import math

import pytest

from bsmkit.model import AttackClass, Bsm, BsmWindow, ProcessedRecord
from bsmkit.preprocess import round3

ZERO3 = (0.0, 0.0, 0.0)


def make_bsm(
    rcv_time: float = 10.5,
    send_time: float = 10.49,
    sender_id: int = 7,
    sender_pseudo: int = 101,
    message_id: int = 0,
    pos: tuple = (1.0, 2.0, 0.0),
    spd: tuple = (3.0, 4.0, 0.0),
    acl: tuple = ZERO3,
    hed: tuple = (1.0, 0.0, 0.0),
    **noise,
) -> Bsm:
    return Bsm(
        msg_type=noise.get("msg_type", 3),
        rcv_time=rcv_time,
        send_time=send_time,
        sender_id=sender_id,
        sender_pseudo=sender_pseudo,
        message_id=message_id,
        pos=pos,
        pos_noise=noise.get("pos_noise", ZERO3),
        spd=spd,
        spd_noise=noise.get("spd_noise", ZERO3),
        acl=acl,
        acl_noise=noise.get("acl_noise", ZERO3),
        hed=hed,
        hed_noise=noise.get("hed_noise", ZERO3),
    )


def make_record(
    i: int = 0,
    pseudo: int = 101,
    label: AttackClass = AttackClass.GENUINE,
    t0: float = 10.0,
    dt: float = 1.0,
    pos0: tuple[float, float] = (100.0, 200.0),
    speed: float = 5.0,
    theta: float = 0.0,
) -> ProcessedRecord:
    """One record of a constant-velocity track, rounded like the pipeline."""
    t = t0 + i * dt
    return ProcessedRecord(
        rcv_time=round3(t + 0.01),
        send_time=round3(t),
        sender_id=pseudo,
        sender_pseudo=pseudo,
        message_id=i,
        pos_x=round3(pos0[0] + speed * math.cos(theta) * i * dt),
        pos_y=round3(pos0[1] + speed * math.sin(theta) * i * dt),
        spd=round3(speed),
        acl=0.0,
        hed_x=round3(math.cos(theta)),
        hed_y=round3(math.sin(theta)),
        label=label,
    )


def make_window(
    n: int = 4,
    pseudo: int = 101,
    label: AttackClass = AttackClass.GENUINE,
    t0: float = 10.0,
    speed: float = 5.0,
    theta: float = 0.0,
) -> BsmWindow:
    records = [
        make_record(i, pseudo=pseudo, label=label, t0=t0, speed=speed, theta=theta)
        for i in range(n)
    ]
    return BsmWindow.from_records(records)


@pytest.fixture
def window4() -> BsmWindow:
    return make_window(4)
