"""Deterministic roadside-unit / trust-authority simulation.

Vehicles broadcast their message streams; every RSU within sensing range
buffers per pseudonym and classifies each full tumbling window. Attack
verdicts become reports; the trust authority revokes a pseudonym once
enough DISTINCT RSUs have reported it. Everything is event-driven and
ordered by (time, sender, message id), so a fixed seed gives
byte-identical event logs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from bsmkit.attacksim import ScenarioConfig, generate_streams
from bsmkit.gateway import Classification, Classifier
from bsmkit.metrics import BINARY_CLASS_NAMES, EvalReport, confusion, report
from bsmkit.model import AttackClass, Bsm, BsmWindow, ToolkitError
from bsmkit.preprocess import transform
from bsmkit.promptgen import textualize_columnwise

BENIGN_VERDICTS = ("benign", AttackClass.GENUINE.code)


class EmptyScenario(ToolkitError):
    pass


class MissingGroundTruth(ToolkitError):
    pass


class SimAborted(ToolkitError):
    """Classifier failure mid-run; the partial outcome rides along."""

    def __init__(self, message: str, outcome: "SimOutcome"):
        super().__init__(message)
        self.outcome = outcome


@dataclass
class SimConfig:
    """Scenario plus detection-side knobs: RSU layout, windowing, quorum."""

    scenario: ScenarioConfig
    rsu_positions: list[tuple[float, float]]
    classifier: Classifier
    window_size: int = 10
    sensing_range: float = 500.0
    ta_threshold: int = 2
    revocation_enabled: bool = True
    task: str = "binary"
    second_stage: Callable[["MisbehaviorReport"], bool] | None = None

    def validate(self) -> None:
        if len(self.rsu_positions) < 1:
            raise ValueError("need at least one RSU")
        if self.sensing_range <= 0:
            raise ValueError(f"sensing range {self.sensing_range} must be positive")
        if self.window_size < 2:
            raise ValueError(f"window size {self.window_size} < 2")
        if self.ta_threshold < 1:
            raise ValueError(f"trust-authority threshold {self.ta_threshold} < 1")
        if self.task not in ("binary", "multiclass"):
            raise ValueError(f"task must be 'binary' or 'multiclass', got {self.task!r}")


@dataclass(frozen=True)
class MisbehaviorReport:
    """One RSU's claim that a pseudonym misbehaved over one window."""

    rsu_id: int
    sender_pseudo: int
    predicted: str
    scores: tuple[float, ...]
    window_start: float
    window_end: float
    report_time: float

    def __post_init__(self) -> None:
        if self.window_end < self.window_start:
            raise ValueError("window ends before it starts")


@dataclass
class TaState:
    """Accumulated evidence: which RSUs reported each pseudonym."""

    threshold: int
    reporters: dict[int, set[int]] = field(default_factory=dict)
    revoked: set[int] = field(default_factory=set)


def ta_process(
    rpt: MisbehaviorReport,
    state: TaState,
    second_stage: Callable[[MisbehaviorReport], bool] | None = None,
) -> str:
    """Fold one report into the trust authority; returns the decision.

    Revocation needs reports from `threshold` DISTINCT RSUs. A configured
    second stage (a slower, deeper analysis standing behind the edge
    verdicts) can veto at the moment quorum is reached.
    """
    if rpt.sender_pseudo in state.revoked:
        return "already-revoked"
    rsus = state.reporters.setdefault(rpt.sender_pseudo, set())
    rsus.add(rpt.rsu_id)
    if len(rsus) < state.threshold:
        return "recorded"
    if second_stage is not None and not second_stage(rpt):
        return "vetoed"
    state.revoked.add(rpt.sender_pseudo)
    return "revoke"


@dataclass
class OutcomeEvaluation:
    """Pseudonym-level (revoked vs truly misbehaving) and window-level views."""

    pseudonym_report: EvalReport
    window_report: EvalReport | None
    detection_latency: dict[int, float]


@dataclass
class SimOutcome:
    reports: list[MisbehaviorReport]
    revocations: list[tuple[int, float]]
    event_log: list[dict]
    detection_latency: dict[int, float]
    window_verdicts: list[tuple[int, AttackClass, Classification]]
    ground_truth: dict[int, AttackClass]
    eval: OutcomeEvaluation | None = None
    partial: bool = False
    error: str | None = None


def _within_range(rsu: tuple[float, float], msg: Bsm, sensing_range: float) -> bool:
    # Sensing keys off the reported position: traces carry no other one.
    return math.hypot(msg.pos[0] - rsu[0], msg.pos[1] - rsu[1]) <= sensing_range


def _window_prompt(buffered: list[Bsm], label: AttackClass):
    records = [transform(b, label) for b in buffered]
    return textualize_columnwise(BsmWindow.from_records(records))


def run(cfg: SimConfig) -> SimOutcome:
    """Drive the full broadcast -> RSU -> TA loop for one scenario."""
    cfg.validate()
    streams, truth = generate_streams(cfg.scenario)
    messages = [m for s in streams for m in s.messages]
    if not messages:
        raise EmptyScenario("scenario produced no messages")
    messages.sort(key=lambda m: (m.rcv_time, m.sender_id, m.message_id, m.sender_pseudo))

    first_attack_time: dict[int, float] = {}
    for m in messages:
        if truth[m.sender_pseudo] is not AttackClass.GENUINE:
            if m.sender_pseudo not in first_attack_time:
                first_attack_time[m.sender_pseudo] = m.rcv_time

    buffers: dict[tuple[int, int], list[Bsm]] = {}
    ta = TaState(threshold=cfg.ta_threshold)
    outcome = SimOutcome(
        reports=[],
        revocations=[],
        event_log=[],
        detection_latency={},
        window_verdicts=[],
        ground_truth=truth,
    )

    def log(t: float, kind: str, payload: dict) -> None:
        outcome.event_log.append({"t": round(t, 6), "kind": kind, "payload": payload})

    try:
        for m in messages:
            if cfg.revocation_enabled and m.sender_pseudo in ta.revoked:
                log(m.rcv_time, "drop", {"pseudo": m.sender_pseudo, "message_id": m.message_id})
                continue
            for rsu_id, rsu_pos in enumerate(cfg.rsu_positions):
                if not _within_range(rsu_pos, m, cfg.sensing_range):
                    continue
                buf = buffers.setdefault((rsu_id, m.sender_pseudo), [])
                buf.append(m)
                log(m.rcv_time, "ingest", {"rsu": rsu_id, "pseudo": m.sender_pseudo, "message_id": m.message_id})
                if len(buf) < cfg.window_size:
                    continue
                window_msgs, buffers[(rsu_id, m.sender_pseudo)] = buf[:], []
                true_class = truth[m.sender_pseudo]
                prompt = _window_prompt(window_msgs, true_class)
                verdict = cfg.classifier.classify([prompt], cfg.task)[0]
                outcome.window_verdicts.append((m.sender_pseudo, true_class, verdict))
                start = window_msgs[0].rcv_time
                end = window_msgs[-1].rcv_time
                log(
                    end,
                    "window",
                    {
                        "rsu": rsu_id,
                        "pseudo": m.sender_pseudo,
                        "start": round(start, 6),
                        "end": round(end, 6),
                        "predicted": verdict.label,
                    },
                )
                if verdict.label in BENIGN_VERDICTS:
                    continue
                rpt = MisbehaviorReport(
                    rsu_id=rsu_id,
                    sender_pseudo=m.sender_pseudo,
                    predicted=verdict.label,
                    scores=verdict.scores,
                    window_start=start,
                    window_end=end,
                    report_time=end,
                )
                outcome.reports.append(rpt)
                log(end, "report", {"rsu": rsu_id, "pseudo": m.sender_pseudo, "predicted": verdict.label})
                if not cfg.revocation_enabled:
                    continue
                decision = ta_process(rpt, ta, cfg.second_stage)
                if decision == "revoke":
                    outcome.revocations.append((m.sender_pseudo, end))
                    log(end, "revoke", {"pseudo": m.sender_pseudo})
                    if m.sender_pseudo in first_attack_time:
                        outcome.detection_latency[m.sender_pseudo] = end - first_attack_time[m.sender_pseudo]
                elif decision == "vetoed":
                    log(end, "veto", {"pseudo": m.sender_pseudo})
    except ToolkitError as exc:
        outcome.partial = True
        outcome.error = str(exc)
        raise SimAborted(f"classifier failed mid-run: {exc}", outcome) from exc

    outcome.eval = evaluate_outcome(outcome, truth)
    return outcome


def evaluate_outcome(outcome: SimOutcome, ground_truth: dict[int, AttackClass]) -> OutcomeEvaluation:
    """Score an outcome at the pseudonym level and the window level."""
    if not ground_truth:
        raise EmptyScenario("no pseudonyms in ground truth")
    for rpt in outcome.reports:
        if rpt.sender_pseudo not in ground_truth:
            raise MissingGroundTruth(f"report names unknown pseudonym {rpt.sender_pseudo}")

    revoked = {p for p, _ in outcome.revocations}
    preds, labels = [], []
    for pseudo in sorted(ground_truth):
        preds.append(1 if pseudo in revoked else 0)
        labels.append(0 if ground_truth[pseudo] is AttackClass.GENUINE else 1)
    pseudo_report = report(confusion(preds, labels, 2, BINARY_CLASS_NAMES))

    window_report = None
    if outcome.window_verdicts:
        wp, wl = [], []
        for _, true_class, verdict in outcome.window_verdicts:
            wp.append(0 if verdict.label in BENIGN_VERDICTS else 1)
            wl.append(0 if true_class is AttackClass.GENUINE else 1)
        window_report = report(confusion(wp, wl, 2, BINARY_CLASS_NAMES))

    return OutcomeEvaluation(
        pseudonym_report=pseudo_report,
        window_report=window_report,
        detection_latency=dict(outcome.detection_latency),
    )


def write_event_log(outcome: SimOutcome, path: str | Path) -> None:
    """Line-delimited JSON, one {t, kind, payload} object per event."""
    with open(path, "w", encoding="utf-8") as fh:
        for event in outcome.event_log:
            fh.write(json.dumps(event))
            fh.write("\n")


def outcome_summary(outcome: SimOutcome) -> dict:
    truth = outcome.ground_truth
    attackers = sorted(p for p, c in truth.items() if c is not AttackClass.GENUINE)
    summary = {
        "pseudonyms": len(truth),
        "attackers": len(attackers),
        "reports": len(outcome.reports),
        "revocations": [[p, round(t, 6)] for p, t in outcome.revocations],
        "detection_latency": {str(p): round(v, 6) for p, v in sorted(outcome.detection_latency.items())},
        "partial": outcome.partial,
    }
    if outcome.eval is not None:
        summary["pseudonym_metrics"] = outcome.eval.pseudonym_report.to_dict()
        if outcome.eval.window_report is not None:
            summary["window_metrics"] = outcome.eval.window_report.to_dict()
    return summary


def latency_csv(outcome: SimOutcome) -> str:
    lines = ["pseudo,latency_s"]
    for pseudo, latency in sorted(outcome.detection_latency.items()):
        lines.append(f"{pseudo},{latency:.6f}")
    return "\n".join(lines) + "\n"
