"""Shared domain types: attack taxonomy, raw and processed messages, windows.

All types here are immutable value objects and safe to share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

Vec3 = tuple[float, float, float]


class ToolkitError(Exception):
    """Base class for all domain errors raised by this package."""


class UnknownAttackCode(ToolkitError):
    """Attack code token not in the 9-class taxonomy."""


class UnknownAttackName(ToolkitError):
    """Attack type name not in the 9-class taxonomy."""


class InvalidWindow(ToolkitError):
    """Window records violate a structural invariant."""


class AttackClass(Enum):
    """The nine behavior classes. A0 is the only benign one.

    Persisted artifacts always store the code string ("A0".."A18"); codes
    are stable across renames and appear in trace filenames.
    """

    GENUINE = ("A0", "Genuine")
    CONST_POS = ("A1", "ConstPos")
    CONST_SPEED = ("A5", "ConstSpeed")
    EVENTUAL_STOP = ("A9", "EventualStop")
    DATA_REPLAY = ("A11", "DataReply")
    DELAYED_MESSAGES = ("A12", "DelayedMessages")
    DOS = ("A13", "DoS")
    DOS_RANDOM = ("A14", "DoSRandom")
    DOS_RANDOM_SYBIL = ("A18", "DoSRandomSybil")

    @property
    def code(self) -> str:
        return self.value[0]

    @property
    def attack_name(self) -> str:
        return self.value[1]

    @property
    def is_benign(self) -> bool:
        return self is AttackClass.GENUINE

    @property
    def binary_label(self) -> str:
        return "benign" if self.is_benign else "attack"

    @property
    def index(self) -> int:
        """Position in the canonical class order (used for matrix axes)."""
        return CLASS_ORDER.index(self)

    def __str__(self) -> str:
        return self.code


# Canonical ordering for confusion matrices, reports, and exports.
CLASS_ORDER: tuple[AttackClass, ...] = tuple(AttackClass)

_BY_CODE = {c.code: c for c in AttackClass}
_BY_NAME = {c.attack_name: c for c in AttackClass}


def attack_class_from_code(code: str) -> AttackClass:
    """Resolve a code token like "A13" to its class, case-sensitively."""
    if not code:
        raise UnknownAttackCode("empty attack code")
    cls = _BY_CODE.get(code)
    if cls is None:
        raise UnknownAttackCode(f"unknown attack code {code!r}")
    return cls


def attack_class_from_name(name: str) -> AttackClass:
    """Resolve an attack type name like "ConstPos" to its class."""
    cls = _BY_NAME.get(name)
    if cls is None:
        raise UnknownAttackName(f"unknown attack name {name!r}")
    return cls


@dataclass(frozen=True)
class Bsm:
    """One raw type-3 safety message as parsed from a trace line.

    Third vector components are kept verbatim at parse time; preprocessing
    drops them. The parser does not enforce rcv_time >= send_time because
    attack traffic may violate it.
    """

    msg_type: int
    rcv_time: float
    send_time: float
    sender_id: int
    sender_pseudo: int
    message_id: int
    pos: Vec3
    pos_noise: Vec3
    spd: Vec3
    spd_noise: Vec3
    acl: Vec3
    acl_noise: Vec3
    hed: Vec3
    hed_noise: Vec3


@dataclass(frozen=True)
class ProcessedRecord:
    """A message after field transforms: scalar speed/acceleration norms,
    split position/heading, everything rounded to 3 decimals."""

    rcv_time: float
    send_time: float
    sender_id: int
    sender_pseudo: int
    message_id: int
    pos_x: float
    pos_y: float
    spd: float
    acl: float
    hed_x: float
    hed_y: float
    label: AttackClass

    # Feature column order used by prompt textualization and persistence.
    FEATURE_FIELDS = (
        "rcv_time",
        "send_time",
        "pos_x",
        "pos_y",
        "spd",
        "acl",
        "hed_x",
        "hed_y",
    )


@dataclass(frozen=True)
class BsmWindow:
    """A fixed run of consecutive processed records from one pseudonym.

    Invariants checked at construction: at least 2 records, length equals
    window_size, single pseudonym and label, non-decreasing rcv_time.
    """

    records: tuple[ProcessedRecord, ...]
    sender_pseudo: int
    label: AttackClass
    window_size: int

    def __post_init__(self) -> None:
        if self.window_size < 2:
            raise InvalidWindow(f"window size {self.window_size} < 2")
        if len(self.records) != self.window_size:
            raise InvalidWindow(
                f"{len(self.records)} records but window size {self.window_size}"
            )
        for r in self.records:
            if r.sender_pseudo != self.sender_pseudo:
                raise InvalidWindow(
                    f"mixed pseudonyms {r.sender_pseudo} vs {self.sender_pseudo}"
                )
            if r.label is not self.label:
                raise InvalidWindow(f"mixed labels {r.label} vs {self.label}")
        times = [r.rcv_time for r in self.records]
        if any(a > b for a, b in zip(times, times[1:])):
            raise InvalidWindow("rcv_time not non-decreasing")

    @classmethod
    def from_records(cls, records: list[ProcessedRecord] | tuple[ProcessedRecord, ...]) -> "BsmWindow":
        """Build a window, deriving pseudonym, label, and size from the records."""
        recs = tuple(records)
        if not recs:
            raise InvalidWindow("empty window")
        return cls(
            records=recs,
            sender_pseudo=recs[0].sender_pseudo,
            label=recs[0].label,
            window_size=len(recs),
        )

    @property
    def start_time(self) -> float:
        return self.records[0].rcv_time

    @property
    def end_time(self) -> float:
        return self.records[-1].rcv_time


# Default window sizes studied throughout; any n >= 2 is accepted.
WINDOW_SIZE_PRESETS = (10, 20, 50, 100)


_MANIFEST_FIELDS = (
    "quantization",
    "lora_r",
    "lora_alpha",
    "lora_dropout",
    "bias",
    "target_modules",
    "task",
    "per_class_samples",
    "window_size",
    "label_set",
)


@dataclass(frozen=True)
class FineTuneManifest:
    """Adapter fine-tuning configuration handed to the model server.

    Defaults are the committed low-rank adapter settings; the training side
    consumes this file verbatim, so serialization must round-trip bit-exact.
    """

    quantization: str = "4-bit"
    lora_r: int = 2
    lora_alpha: int = 16
    lora_dropout: float = 0.05
    bias: str = "none"
    target_modules: tuple[str, ...] = ("q_proj", "v_proj", "score")
    task: str = "sequence classification"
    per_class_samples: int = 1000
    window_size: int = 10
    label_set: str = "binary"

    def __post_init__(self) -> None:
        if self.label_set not in ("binary", "multiclass"):
            raise ValueError(f"label_set must be binary or multiclass, got {self.label_set!r}")

    def to_json(self) -> str:
        doc = {}
        for name in _MANIFEST_FIELDS:
            value = getattr(self, name)
            doc[name] = list(value) if isinstance(value, tuple) else value
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "FineTuneManifest":
        doc = json.loads(text)
        kwargs = {name: doc[name] for name in _MANIFEST_FIELDS}
        kwargs["target_modules"] = tuple(kwargs["target_modules"])
        return cls(**kwargs)
