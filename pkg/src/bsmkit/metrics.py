"""Confusion matrices and the precision/recall/F1/accuracy suite.

Zero-denominator metrics come back as 0 with defined=False instead of
raising: small desk-scale runs routinely hit empty classes. Weighted
recall is computed in its algebraically reduced form (sum of diagonal
over total), which makes it *exactly* equal to accuracy for every matrix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from bsmkit.model import CLASS_ORDER, ToolkitError


class LengthMismatch(ToolkitError):
    pass


class ClassOutOfRange(ToolkitError):
    pass


class EmptyMatrix(ToolkitError):
    pass


ATTACK_CLASS_NAMES = tuple(c.code for c in CLASS_ORDER)
BINARY_CLASS_NAMES = ("benign", "attack")


class Metric(NamedTuple):
    """A ratio metric plus whether its denominator was nonzero."""

    value: float
    defined: bool


@dataclass
class ConfusionMatrix:
    """k x k counts; rows are true classes, columns predicted."""

    counts: np.ndarray
    class_names: tuple[str, ...]

    @classmethod
    def zeros(cls, class_names: Sequence[str]) -> "ConfusionMatrix":
        k = len(class_names)
        return cls(counts=np.zeros((k, k), dtype=np.int64), class_names=tuple(class_names))

    @property
    def k(self) -> int:
        return len(self.class_names)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def support(self, i: int) -> int:
        return int(self.counts[i, :].sum())

    def predicted(self, i: int) -> int:
        return int(self.counts[:, i].sum())


def confusion(
    preds: Sequence[int], labels: Sequence[int], k: int, class_names: Sequence[str] | None = None
) -> ConfusionMatrix:
    """Tally counts[true][pred] over paired predictions and labels."""
    if len(preds) != len(labels):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(labels)} labels")
    if class_names is None:
        class_names = [str(i) for i in range(k)]
    if len(class_names) != k:
        raise ValueError(f"{len(class_names)} class names for k={k}")
    cm = ConfusionMatrix.zeros(class_names)
    for p, t in zip(preds, labels):
        if not (0 <= p < k and 0 <= t < k):
            raise ClassOutOfRange(f"(pred={p}, true={t}) outside [0, {k})")
        cm.counts[t, p] += 1
    return cm


def precision(cm: ConfusionMatrix, cls: int) -> Metric:
    """True positives over everything predicted as cls."""
    tp = int(cm.counts[cls, cls])
    denom = cm.predicted(cls)
    if denom == 0:
        return Metric(0.0, False)
    return Metric(tp / denom, True)


def recall(cm: ConfusionMatrix, cls: int) -> Metric:
    """True positives over everything actually of class cls."""
    tp = int(cm.counts[cls, cls])
    denom = cm.support(cls)
    if denom == 0:
        return Metric(0.0, False)
    return Metric(tp / denom, True)


def f1(p: float, r: float) -> float:
    """Harmonic mean of precision and recall; 0 when both vanish."""
    if p + r == 0.0:
        return 0.0
    return 2.0 * p * r / (p + r)


def accuracy(cm: ConfusionMatrix) -> float:
    total = cm.total
    if total == 0:
        raise EmptyMatrix("no evaluated instances")
    return float(np.trace(cm.counts)) / total


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int
    precision_defined: bool
    recall_defined: bool


@dataclass
class EvalReport:
    """Per-class and aggregate metrics for one evaluation run.

    Both macro (unweighted class mean) and support-weighted aggregates are
    reported; the weighted numbers are the headline. weighted_recall always
    equals accuracy.
    """

    window_size: int | None
    accuracy: float
    per_class: dict[str, ClassMetrics]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    cm: ConfusionMatrix

    def to_dict(self) -> dict:
        return {
            "window_size": self.window_size,
            "accuracy": self.accuracy,
            "macro": {
                "precision": self.macro_precision,
                "recall": self.macro_recall,
                "f1": self.macro_f1,
            },
            "weighted": {
                "precision": self.weighted_precision,
                "recall": self.weighted_recall,
                "f1": self.weighted_f1,
            },
            "per_class": {
                name: {
                    "precision": m.precision,
                    "recall": m.recall,
                    "f1": m.f1,
                    "support": m.support,
                    "precision_defined": m.precision_defined,
                    "recall_defined": m.recall_defined,
                }
                for name, m in self.per_class.items()
            },
            "confusion": self.cm.counts.tolist(),
            "class_names": list(self.cm.class_names),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_text_table(self) -> str:
        """Aligned table in the Accuracy / F1 / Recall / Precision layout."""
        header = f"{'Window size':>11}  {'Accuracy':>9}  {'F1':>9}  {'Recall':>9}  {'Precision':>9}"
        window = str(self.window_size) if self.window_size is not None else "-"
        headline = (
            f"{window:>11}  {self.accuracy:>9.4f}  {self.weighted_f1:>9.4f}"
            f"  {self.weighted_recall:>9.4f}  {self.weighted_precision:>9.4f}"
        )
        lines = [header, headline, "", f"{'class':>11}  {'support':>9}  {'F1':>9}  {'Recall':>9}  {'Precision':>9}"]
        for name, m in self.per_class.items():
            lines.append(
                f"{name:>11}  {m.support:>9d}  {m.f1:>9.4f}  {m.recall:>9.4f}  {m.precision:>9.4f}"
            )
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        rows = ["class,support,precision,recall,f1"]
        for name, m in self.per_class.items():
            rows.append(f"{name},{m.support},{m.precision:.6f},{m.recall:.6f},{m.f1:.6f}")
        rows.append(f"macro,,{self.macro_precision:.6f},{self.macro_recall:.6f},{self.macro_f1:.6f}")
        rows.append(
            f"weighted,{self.cm.total},{self.weighted_precision:.6f},"
            f"{self.weighted_recall:.6f},{self.weighted_f1:.6f}"
        )
        rows.append(f"accuracy,,,{self.accuracy:.6f},")
        return "\n".join(rows) + "\n"


def report(cm: ConfusionMatrix, window_size: int | None = None) -> EvalReport:
    """Full metric report from a confusion matrix."""
    acc = accuracy(cm)
    per_class: dict[str, ClassMetrics] = {}
    precisions, recalls, f1s, supports = [], [], [], []
    for i, name in enumerate(cm.class_names):
        p = precision(cm, i)
        r = recall(cm, i)
        score = f1(p.value, r.value)
        per_class[name] = ClassMetrics(
            precision=p.value,
            recall=r.value,
            f1=score,
            support=cm.support(i),
            precision_defined=p.defined,
            recall_defined=r.defined,
        )
        precisions.append(p.value)
        recalls.append(r.value)
        f1s.append(score)
        supports.append(cm.support(i))

    total = cm.total
    weights = [s / total for s in supports]
    # Reduced form: sum of per-class true positives over total. Identical
    # to the support-weighted mean of recalls, but exact in floats.
    weighted_recall = float(np.trace(cm.counts)) / total
    return EvalReport(
        window_size=window_size,
        accuracy=acc,
        per_class=per_class,
        macro_precision=float(np.mean(precisions)),
        macro_recall=float(np.mean(recalls)),
        macro_f1=float(np.mean(f1s)),
        weighted_precision=float(sum(w * p for w, p in zip(weights, precisions))),
        weighted_recall=weighted_recall,
        weighted_f1=float(sum(w * s for w, s in zip(weights, f1s))),
        cm=cm,
    )
