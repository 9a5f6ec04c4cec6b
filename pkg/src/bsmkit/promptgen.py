"""Textualize windows into prompts and export balanced labeled datasets.

The column-wise grammar is frozen: 8 lines, one per feature column, each
"<field>: v1 v2 ... vn". Golden-file tests pin the exact bytes; changing
the grammar is a breaking change.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from pathlib import Path

from bsmkit.model import AttackClass, BsmWindow, ToolkitError

# Prompt-facing column names, in grammar order, paired with the record
# attribute each one reads. Identifier fields (sender, pseudonym, message
# id) are deliberately excluded: they carry no behavioral signal, and
# rcvTime already encodes the arrival rate.
COLUMNS = (
    ("rcvTime", "rcv_time"),
    ("sendTime", "send_time"),
    ("pos-x", "pos_x"),
    ("pos-y", "pos_y"),
    ("spd", "spd"),
    ("acl", "acl"),
    ("hed-x", "hed_x"),
    ("hed-y", "hed_y"),
)


class InsufficientClass(ToolkitError):
    """A class has fewer samples than the balance target."""

    def __init__(self, class_key: str, available: int, requested: int):
        super().__init__(
            f"class {class_key}: {available} samples available, {requested} requested"
        )
        self.class_key = class_key
        self.available = available
        self.requested = requested


@dataclass(frozen=True)
class PromptSample:
    """A textualized window ready for a sequence classifier.

    The text never contains label information; the label fields ride
    alongside for training exports and oracles.
    """

    text: str
    label: AttackClass
    binary_label: str
    window_size: int
    pseudo: int
    truncated: bool = False


@dataclass(frozen=True)
class BalanceSpec:
    """How many samples per class to export, over which label set."""

    per_class: int
    classes: str = "binary"  # "binary" or "all"
    seed: int = 0
    undersample_majority: bool = True

    def __post_init__(self) -> None:
        if self.per_class < 1:
            raise ValueError(f"per_class {self.per_class} < 1")
        if self.classes not in ("binary", "all"):
            raise ValueError(f"classes must be 'binary' or 'all', got {self.classes!r}")


def format_value(x: float) -> str:
    """Up to 3 decimals, trailing zeros trimmed; negative zero collapses."""
    s = f"{x:.3f}".rstrip("0").rstrip(".")
    if s in ("-0", ""):
        return "0"
    return s


def textualize_columnwise(w: BsmWindow) -> PromptSample:
    """One line per feature column: "<field>: v1 v2 ... vn", newline-joined."""
    lines = []
    for column_name, attr in COLUMNS:
        values = " ".join(format_value(getattr(r, attr)) for r in w.records)
        lines.append(f"{column_name}: {values}")
    return PromptSample(
        text="\n".join(lines),
        label=w.label,
        binary_label=w.label.binary_label,
        window_size=w.window_size,
        pseudo=w.sender_pseudo,
    )


def textualize_rowwise(w: BsmWindow) -> PromptSample:
    """One line per record, every value preceded by its field name."""
    lines = []
    for r in w.records:
        pairs = ", ".join(
            f"{column_name}: {format_value(getattr(r, attr))}" for column_name, attr in COLUMNS
        )
        lines.append(pairs)
    return PromptSample(
        text="\n".join(lines),
        label=w.label,
        binary_label=w.label.binary_label,
        window_size=w.window_size,
        pseudo=w.sender_pseudo,
    )


def parse_columnwise(text: str) -> dict[str, list[float]]:
    """Invert the column-wise grammar back to per-field value lists.

    The grammar is lossless for the 3-decimal feature values, so this
    recovers them exactly.
    """
    out: dict[str, list[float]] = {}
    for line in text.split("\n"):
        name, _, rest = line.partition(": ")
        if not _:
            raise ValueError(f"not a column line: {line!r}")
        out[name] = [float(tok) for tok in rest.split(" ")] if rest else []
    return out


def truncate_prompt(p: PromptSample, max_chars: int) -> PromptSample:
    """Cut the text at max_chars, flagging the sample when a cut happened."""
    if max_chars < 1:
        raise ValueError(f"max_chars {max_chars} < 1")
    if len(p.text) <= max_chars:
        return p
    return replace(p, text=p.text[:max_chars], truncated=True)


@dataclass
class ExportReport:
    path: Path
    per_class: dict[str, int]
    total: int


def _class_key(sample: PromptSample, classes: str) -> str:
    return sample.binary_label if classes == "binary" else sample.label.code


def _ordered_keys(classes: str) -> list[str]:
    if classes == "binary":
        return ["benign", "attack"]
    return [c.code for c in AttackClass]


def balance_and_export(
    samples: list[PromptSample], spec: BalanceSpec, path: str | Path
) -> ExportReport:
    """Select a balanced subset, shuffle, and write line-delimited JSON.

    Every class present in the requested label set must hold at least
    per_class samples. With undersample_majority (the default) each class
    is sampled down to exactly per_class; without it, classes keep all
    their samples and per_class acts as a floor check only. One seeded
    generator drives both selection and the final shuffle, so identical
    inputs give byte-identical files.
    """
    path = Path(path)
    buckets: dict[str, list[PromptSample]] = {key: [] for key in _ordered_keys(spec.classes)}
    for s in samples:
        buckets[_class_key(s, spec.classes)].append(s)

    rng = random.Random(spec.seed)
    selected: list[PromptSample] = []
    per_class_counts: dict[str, int] = {}
    for key in _ordered_keys(spec.classes):
        bucket = buckets[key]
        if len(bucket) < spec.per_class:
            raise InsufficientClass(key, len(bucket), spec.per_class)
        if spec.undersample_majority:
            chosen = rng.sample(bucket, spec.per_class)
        else:
            chosen = list(bucket)
        per_class_counts[key] = len(chosen)
        selected.extend(chosen)
    rng.shuffle(selected)

    with open(path, "w", encoding="utf-8") as fh:
        for s in selected:
            fh.write(
                json.dumps(
                    {"text": s.text, "label": s.label.code, "binary_label": s.binary_label}
                )
            )
            fh.write("\n")
    return ExportReport(path=path, per_class=per_class_counts, total=len(selected))
