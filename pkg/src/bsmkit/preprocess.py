"""Raw-message pipeline: dedup, field transforms, labeling, grouping, windowing.

The stages compose into run_pipeline(): concatenate parsed trace files,
drop duplicate receptions, condense vectors to scalars, round, attach the
file-level label, then group per pseudonym and cut fixed-size windows.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

from bsmkit.model import (
    AttackClass,
    Bsm,
    BsmWindow,
    ProcessedRecord,
    ToolkitError,
    Vec3,
)
from bsmkit.traceio import TraceFile

log = logging.getLogger(__name__)


class NonFinite(ToolkitError):
    """Numeric input is NaN or infinite."""


@dataclass(frozen=True)
class WindowingConfig:
    """Window length and stride. stride == window_size means tumbling."""

    window_size: int
    stride: int | None = None
    drop_incomplete: bool = True

    def __post_init__(self) -> None:
        if self.window_size < 2:
            raise ValueError(f"window_size {self.window_size} < 2")
        if self.stride is None:
            object.__setattr__(self, "stride", self.window_size)
        if not 1 <= self.stride <= self.window_size:
            raise ValueError(f"stride {self.stride} outside [1, {self.window_size}]")


def _dedup_keep_indices(records: list[Bsm]) -> list[int]:
    """Surviving index per (pseudonym, message id) group: minimal rcv_time,
    ties broken by input order; survivors keep their own input positions."""
    best: dict[tuple[int, int], int] = {}
    for i, b in enumerate(records):
        key = (b.sender_pseudo, b.message_id)
        if key not in best or b.rcv_time < records[best[key]].rcv_time:
            best[key] = i
    return sorted(best.values())


def dedup(records: list[Bsm]) -> list[Bsm]:
    """Remove duplicate receptions of the same message.

    One record survives per (sender_pseudo, message_id): the one with the
    minimal rcv_time, first-in-input on ties. Survivors stay in their
    original relative order.
    """
    return [records[i] for i in _dedup_keep_indices(records)]


def vec_norm(v: Vec3) -> float:
    """Euclidean norm of a 3-vector; raises NonFinite on bad components."""
    if not all(math.isfinite(c) for c in v):
        raise NonFinite(f"non-finite vector {v!r}")
    return math.hypot(v[0], v[1], v[2])


def round3(x: float) -> float:
    """Round to the nearest 0.001, ties away from zero. Idempotent."""
    if not math.isfinite(x):
        raise NonFinite(f"cannot round {x!r}")
    return float(Decimal(repr(float(x))).quantize(Decimal("0.001"), rounding=ROUND_HALF_UP))


def transform(b: Bsm, label: AttackClass) -> ProcessedRecord:
    """Condense a raw message into the processed feature layout.

    Drops msg_type and the four noise vectors, splits position/heading into
    x/y, replaces speed/acceleration with their norms, rounds every numeric
    to 3 decimals, and attaches the label. A nonzero z component is dropped
    with a warning, never an error.
    """
    for name in ("pos", "hed"):
        z = getattr(b, name)[2]
        if z != 0.0:
            log.warning("nonzero z component %r in %s of message %d dropped", z, name, b.message_id)
    return ProcessedRecord(
        rcv_time=round3(b.rcv_time),
        send_time=round3(b.send_time),
        sender_id=b.sender_id,
        sender_pseudo=b.sender_pseudo,
        message_id=b.message_id,
        pos_x=round3(b.pos[0]),
        pos_y=round3(b.pos[1]),
        spd=round3(vec_norm(b.spd)),
        acl=round3(vec_norm(b.acl)),
        hed_x=round3(b.hed[0]),
        hed_y=round3(b.hed[1]),
        label=label,
    )


def window_count(group_size: int, cfg: WindowingConfig) -> int:
    """Closed-form number of complete windows in a group of group_size."""
    if group_size < cfg.window_size:
        return 0
    return (group_size - cfg.window_size) // cfg.stride + 1


def group_and_window(records: list[ProcessedRecord], cfg: WindowingConfig) -> list[BsmWindow]:
    """Partition by pseudonym, order by rcv_time, cut fixed-size windows.

    Groups keyed by (sender_pseudo, label) so a pseudonym seen under two
    labels yields separate streams. Each group is stable-sorted by rcv_time
    (ties keep input order). Output is canonical: sorted by pseudonym then
    window start position, independent of input interleaving.

    With drop_incomplete, a trailing partial window is discarded; otherwise
    it is emitted with its own (shorter) window_size when it still holds at
    least 2 records.
    """
    groups: dict[tuple[int, str], list[ProcessedRecord]] = {}
    for r in records:
        groups.setdefault((r.sender_pseudo, r.label.code), []).append(r)

    windows: list[BsmWindow] = []
    for key in sorted(groups):
        ordered = sorted(groups[key], key=lambda r: r.rcv_time)
        m = len(ordered)
        n, s = cfg.window_size, cfg.stride
        start = 0
        while start + n <= m:
            windows.append(BsmWindow.from_records(ordered[start : start + n]))
            start += s
        if not cfg.drop_incomplete and start < m and m - start >= 2:
            windows.append(BsmWindow.from_records(ordered[start:]))
    return windows


def run_pipeline(files: list[TraceFile], cfg: WindowingConfig) -> list[BsmWindow]:
    """Full preprocessing over parsed trace files.

    Concatenates records (type-3 filtering already happened at parse),
    dedups across all files, transforms each survivor with its source
    file's attack label, then windows. Deterministic for identical input.
    """
    merged: list[Bsm] = []
    labels: list[AttackClass] = []
    for tf in files:
        merged.extend(tf.records)
        labels.extend([tf.attack] * len(tf.records))
    keep = _dedup_keep_indices(merged)
    processed = [transform(merged[i], labels[i]) for i in keep]
    return group_and_window(processed, cfg)


RECORD_KEYS = (
    "rcv_time",
    "send_time",
    "sender_id",
    "sender_pseudo",
    "message_id",
    "pos_x",
    "pos_y",
    "spd",
    "acl",
    "hed_x",
    "hed_y",
    "label",
)


def write_windows(windows: list[BsmWindow], path) -> None:
    """Persist windows as line-delimited JSON, record keys in fixed order."""
    with open(path, "w", encoding="utf-8") as fh:
        for w in windows:
            records = [
                {key: (r.label.code if key == "label" else getattr(r, key)) for key in RECORD_KEYS}
                for r in w.records
            ]
            doc = {
                "pseudo": w.sender_pseudo,
                "label": w.label.code,
                "n": w.window_size,
                "records": records,
            }
            fh.write(json.dumps(doc))
            fh.write("\n")


def read_windows(path) -> list[BsmWindow]:
    """Inverse of write_windows; validates per-record labels agree."""
    from bsmkit.model import attack_class_from_code

    windows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            doc = json.loads(line)
            label = attack_class_from_code(doc["label"])
            records = []
            for raw in doc["records"]:
                fields = dict(raw)
                record_label = attack_class_from_code(fields.pop("label"))
                if record_label is not label:
                    raise ValueError(
                        f"{path}:{lineno}: record label {record_label.code} != window label {label.code}"
                    )
                records.append(ProcessedRecord(label=record_label, **fields))
            w = BsmWindow.from_records(records)
            if w.sender_pseudo != doc["pseudo"] or w.window_size != doc["n"]:
                raise ValueError(f"{path}:{lineno}: header disagrees with records")
            windows.append(w)
    return windows
