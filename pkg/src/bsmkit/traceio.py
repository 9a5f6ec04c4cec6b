"""Read and write line-delimited JSON trace files in the extended-VeReMi shape.

Each line is one JSON object. Only type-3 lines describe received BSMs and
are parsed into records; other message types are counted and skipped. The
attack label of a file comes from an A<digits> token in its name, never
from record content.
"""

from __future__ import annotations

import logging
import os
import re
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path

# json module used for parsing only; the canonical writer formats by hand
# so that numbers never carry exponent notation.
import json

from bsmkit.model import (
    AttackClass,
    Bsm,
    ToolkitError,
    Vec3,
    attack_class_from_code,
)

log = logging.getLogger(__name__)

BSM_MSG_TYPE = 3

# Wire keys in canonical writer order.
_KEYS = (
    "rcvTime",
    "sendTime",
    "sender",
    "senderPseudo",
    "messageID",
    "pos",
    "pos_noise",
    "spd",
    "spd_noise",
    "acl",
    "acl_noise",
    "hed",
    "hed_noise",
    "type",
)

_VECTOR_KEYS = ("pos", "pos_noise", "spd", "spd_noise", "acl", "acl_noise", "hed", "hed_noise")
# Noise vectors may be absent; they are dropped during preprocessing anyway.
_OPTIONAL_KEYS = ("pos_noise", "spd_noise", "acl_noise", "hed_noise")

_ZERO: Vec3 = (0.0, 0.0, 0.0)


class MalformedLine(ToolkitError):
    """Line is not a valid trace record (bad JSON, missing key, bad field)."""


class NoAttackToken(ToolkitError):
    """Filename carries no delimited A<digits> token."""


class NonBsm:
    """Marker for a well-formed line whose message type is not 3."""

    def __init__(self, msg_type: int):
        self.msg_type = msg_type

    def __repr__(self) -> str:
        return f"NonBsm(msg_type={self.msg_type})"


@dataclass
class TraceFile:
    """A parsed trace: label from the filename, type-3 records in file order."""

    path: Path
    attack: AttackClass
    records: list[Bsm] = field(default_factory=list)
    skipped: int = 0


def _number(obj: dict, key: str) -> float:
    try:
        value = obj[key]
    except KeyError:
        raise MalformedLine(f"missing key {key!r}") from None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise MalformedLine(f"non-numeric value for {key!r}: {value!r}")
    return float(value)


def _integer(obj: dict, key: str) -> int:
    return int(_number(obj, key))


def _vector(obj: dict, key: str) -> Vec3:
    if key not in obj:
        if key in _OPTIONAL_KEYS:
            return _ZERO
        raise MalformedLine(f"missing key {key!r}")
    value = obj[key]
    if not isinstance(value, list) or len(value) != 3:
        raise MalformedLine(f"{key!r} must be a 3-component array, got {value!r}")
    out = []
    for comp in value:
        if isinstance(comp, bool) or not isinstance(comp, (int, float)):
            raise MalformedLine(f"non-numeric component in {key!r}: {comp!r}")
        out.append(float(comp))
    return (out[0], out[1], out[2])


def parse_trace_line(line: str) -> Bsm | NonBsm:
    """Parse one JSON line into a Bsm, or a NonBsm marker for other types.

    Raises MalformedLine for invalid JSON, missing required keys,
    non-numeric fields, or vectors without exactly 3 components.
    """
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedLine(f"invalid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise MalformedLine(f"expected a JSON object, got {type(obj).__name__}")
    msg_type = _integer(obj, "type")
    if msg_type != BSM_MSG_TYPE:
        return NonBsm(msg_type)
    return Bsm(
        msg_type=msg_type,
        rcv_time=_number(obj, "rcvTime"),
        send_time=_number(obj, "sendTime"),
        sender_id=_integer(obj, "sender"),
        sender_pseudo=_integer(obj, "senderPseudo"),
        message_id=_integer(obj, "messageID"),
        pos=_vector(obj, "pos"),
        pos_noise=_vector(obj, "pos_noise"),
        spd=_vector(obj, "spd"),
        spd_noise=_vector(obj, "spd_noise"),
        acl=_vector(obj, "acl"),
        acl_noise=_vector(obj, "acl_noise"),
        hed=_vector(obj, "hed"),
        hed_noise=_vector(obj, "hed_noise"),
    )


_ATTACK_TOKEN = re.compile(r"^A\d+$")


def infer_attack_code(filename: str) -> AttackClass:
    """Recover the attack class from a trace filename.

    The first token matching A<digits>, delimited by '-', '_' or '.', wins;
    additional tokens trigger a warning. Accepts a bare name or a path.
    """
    base = os.path.basename(filename)
    tokens = [t for t in re.split(r"[-_.]", base) if _ATTACK_TOKEN.match(t)]
    if not tokens:
        raise NoAttackToken(f"no A<digits> token in {base!r}")
    if len(tokens) > 1:
        log.warning("multiple attack tokens in %r, using the first (%s)", base, tokens[0])
    return attack_class_from_code(tokens[0])


def read_trace_file(path: str | Path) -> TraceFile:
    """Parse a whole trace file; type-3 lines in order, others counted.

    Raises OSError for unreadable paths and MalformedLine (with the line
    number) for bad content. Whitespace-only lines are ignored.
    """
    path = Path(path)
    attack = infer_attack_code(path.name)
    trace = TraceFile(path=path, attack=attack)
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                parsed = parse_trace_line(line)
            except MalformedLine as exc:
                raise MalformedLine(f"{path.name}:{lineno}: {exc}") from None
            if isinstance(parsed, NonBsm):
                trace.skipped += 1
            else:
                trace.records.append(parsed)
    return trace


def format_number(x: float | int) -> str:
    """Render a number without exponent notation, round-trip exact."""
    if isinstance(x, int):
        return str(x)
    r = repr(float(x))
    if "e" in r or "E" in r:
        return format(Decimal(r), "f")
    return r


def _format_vector(v: Vec3) -> str:
    return "[" + ",".join(format_number(c) for c in v) + "]"


def format_trace_line(b: Bsm) -> str:
    """Canonical one-line serialization of a Bsm (no trailing newline)."""
    parts = [
        f'"rcvTime":{format_number(b.rcv_time)}',
        f'"sendTime":{format_number(b.send_time)}',
        f'"sender":{b.sender_id}',
        f'"senderPseudo":{b.sender_pseudo}',
        f'"messageID":{b.message_id}',
        f'"pos":{_format_vector(b.pos)}',
        f'"pos_noise":{_format_vector(b.pos_noise)}',
        f'"spd":{_format_vector(b.spd)}',
        f'"spd_noise":{_format_vector(b.spd_noise)}',
        f'"acl":{_format_vector(b.acl)}',
        f'"acl_noise":{_format_vector(b.acl_noise)}',
        f'"hed":{_format_vector(b.hed)}',
        f'"hed_noise":{_format_vector(b.hed_noise)}',
        f'"type":{b.msg_type}',
    ]
    return "{" + ",".join(parts) + "}"


def write_trace_file(path: str | Path, records: list[Bsm]) -> None:
    """Write records with the canonical one-object-per-line serialization."""
    with open(path, "w", encoding="utf-8") as fh:
        for b in records:
            fh.write(format_trace_line(b))
            fh.write("\n")
