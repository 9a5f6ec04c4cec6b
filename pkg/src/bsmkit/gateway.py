"""Uniform classifier interface: stub, oracle, native, and remote backends.

All four implementations share one contract: `classify` preserves input
order and cardinality and records a latency per result. The remote client
speaks the model-server wire protocol (JSON over HTTP); the stub carries a
linear cost model so latency benchmarks run without a live server.
"""

from __future__ import annotations

import json
import os
import statistics
import time
import zlib
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np
import requests

from bsmkit.features import extract_features
from bsmkit.model import CLASS_ORDER, AttackClass, BsmWindow, ProcessedRecord, ToolkitError
from bsmkit.nn import Mlp, softmax
from bsmkit.preprocess import round3
from bsmkit.promptgen import COLUMNS, PromptSample, parse_columnwise, textualize_columnwise

ENV_MODEL_URL = "MDS_MODEL_URL"

BINARY_LABELS = ("benign", "attack")
MULTICLASS_LABELS = tuple(c.code for c in CLASS_ORDER)

DEFAULT_TIMEOUT_S = 30.0
DEFAULT_RETRIES = 2
DEFAULT_BATCH_CAP = 16
EMBED_DIM = 4096


class EmptyPromptList(ToolkitError):
    pass


class UnknownTask(ToolkitError):
    pass


class UnknownPseudonym(ToolkitError):
    pass


class NoServerConfigured(ToolkitError):
    pass


class RemoteUnavailable(ToolkitError):
    pass


class ProtocolError(ToolkitError):
    pass


class Timeout(ToolkitError):
    pass


class DimensionError(ToolkitError):
    pass


class BenchConfigError(ToolkitError):
    pass


def task_labels(task: str) -> tuple[str, ...]:
    """Label vocabulary for a task, in score-vector order."""
    if task == "binary":
        return BINARY_LABELS
    if task == "multiclass":
        return MULTICLASS_LABELS
    raise UnknownTask(f"task must be 'binary' or 'multiclass', got {task!r}")


@dataclass(frozen=True)
class Classification:
    """One verdict: label string, per-class scores, and observed latency."""

    label: str
    label_index: int
    scores: tuple[float, ...]
    latency: float
    source: str
    compute_ms: float | None = None

    def __post_init__(self) -> None:
        if self.source not in ("stub", "oracle", "remote", "native"):
            raise ValueError(f"unknown source {self.source!r}")
        if not 0 <= self.label_index < len(self.scores):
            raise ValueError(f"label index {self.label_index} outside {len(self.scores)} scores")
        total = sum(self.scores)
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"scores sum to {total!r}, not 1")
        if self.scores[self.label_index] < max(self.scores):
            raise ValueError("label is not the argmax of scores")


class Classifier(Protocol):
    def classify(self, prompts: Sequence[PromptSample], task: str) -> list[Classification]: ...


def _check_prompts(prompts: Sequence[PromptSample]) -> None:
    if len(prompts) == 0:
        raise EmptyPromptList("classify needs at least one prompt")


class StubClassifier:
    """Deterministic stand-in with latency = base + per_char * len(text).

    Defaults model 5 ms fixed cost plus 0.01 ms per character, so a
    2000-character prompt records 25 ms. The label is a stable hash of
    the text; nothing sleeps, the latency is purely modeled.
    """

    def __init__(self, base_latency: float = 0.005, per_char: float = 1e-5):
        self.base_latency = base_latency
        self.per_char = per_char

    def classify(self, prompts: Sequence[PromptSample], task: str) -> list[Classification]:
        labels = task_labels(task)
        _check_prompts(prompts)
        out = []
        for p in prompts:
            idx = zlib.crc32(p.text.encode("utf-8")) % len(labels)
            rest = 0.1 / (len(labels) - 1)
            scores = tuple(0.9 if i == idx else rest for i in range(len(labels)))
            out.append(
                Classification(
                    label=labels[idx],
                    label_index=idx,
                    scores=scores,
                    latency=self.base_latency + self.per_char * len(p.text),
                    source="stub",
                )
            )
        return out


class OracleClassifier:
    """Answers with the ground truth; plumbing tests hang off this.

    With a truth map, labels come from the sample's pseudonym; without
    one, from the label carried on the sample itself.
    """

    def __init__(self, truth: dict[int, AttackClass] | None = None):
        self.truth = truth

    def _true_class(self, p: PromptSample) -> AttackClass:
        if self.truth is None:
            return p.label
        try:
            return self.truth[p.pseudo]
        except KeyError:
            raise UnknownPseudonym(f"pseudonym {p.pseudo} not in truth map") from None

    def classify(self, prompts: Sequence[PromptSample], task: str) -> list[Classification]:
        labels = task_labels(task)
        _check_prompts(prompts)
        out = []
        for p in prompts:
            cls = self._true_class(p)
            name = cls.binary_label if task == "binary" else cls.code
            idx = labels.index(name)
            scores = tuple(1.0 if i == idx else 0.0 for i in range(len(labels)))
            out.append(
                Classification(label=name, label_index=idx, scores=scores, latency=0.0, source="oracle")
            )
        return out


def window_from_prompt(p: PromptSample) -> BsmWindow:
    """Rebuild a kinematic window from column-wise prompt text.

    The prompt carries no label, so the window gets a neutral placeholder;
    callers use only the numeric fields.
    """
    columns = parse_columnwise(p.text)
    missing = [name for name, _ in COLUMNS if name not in columns]
    if missing:
        raise ValueError(f"prompt lacks columns {missing}")
    n = len(columns[COLUMNS[0][0]])
    records = [
        ProcessedRecord(
            sender_id=p.pseudo,
            sender_pseudo=p.pseudo,
            message_id=i,
            label=AttackClass.GENUINE,
            **{attr: columns[name][i] for name, attr in COLUMNS},
        )
        for i in range(n)
    ]
    return BsmWindow.from_records(records)


class NativeClassifier:
    """Feature-extraction plus in-process network; no server involved.

    Prompts are re-parsed back into kinematic windows, so this backend
    sees exactly what a remote model would, not privileged structures.
    An optional transform (e.g. standardization fit on the training set)
    is applied to the feature matrix before the network.
    """

    def __init__(
        self,
        model: Mlp,
        task: str,
        transform: Callable[[np.ndarray], np.ndarray] | None = None,
    ):
        self.model = model
        self.labels = task_labels(task)
        if model.layer_dims[-1] != len(self.labels):
            raise ValueError(
                f"model emits {model.layer_dims[-1]} classes, task has {len(self.labels)}"
            )
        self.transform = transform

    def classify(self, prompts: Sequence[PromptSample], task: str) -> list[Classification]:
        labels = task_labels(task)
        if labels != self.labels:
            raise UnknownTask(f"classifier was built for {len(self.labels)} labels")
        _check_prompts(prompts)
        t0 = time.perf_counter()
        x = np.stack([extract_features(window_from_prompt(p)) for p in prompts])
        if self.transform is not None:
            x = self.transform(x)
        probs = softmax(self.model.forward(x, train=False))
        elapsed = time.perf_counter() - t0
        per_prompt = elapsed / len(prompts)
        out = []
        for row in probs:
            idx = int(np.argmax(row))
            out.append(
                Classification(
                    label=labels[idx],
                    label_index=idx,
                    scores=tuple(float(v) for v in row),
                    latency=per_prompt,
                    source="native",
                )
            )
        return out


class RemoteClassifier:
    """HTTP client for the model-server wire protocol.

    Requests beyond the batch cap are split and reassembled in input
    order. Connection failures and 5xx responses are retried with the
    same bytes; a 4xx or malformed body fails immediately.
    """

    def __init__(
        self,
        base_url: str | None = None,
        timeout: float = DEFAULT_TIMEOUT_S,
        retries: int = DEFAULT_RETRIES,
        batch_cap: int = DEFAULT_BATCH_CAP,
        session: requests.Session | None = None,
    ):
        if base_url is None:
            base_url = os.environ.get(ENV_MODEL_URL)
        if not base_url:
            raise NoServerConfigured(f"no server URL given and {ENV_MODEL_URL} unset")
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self.batch_cap = batch_cap
        self.session = session or requests.Session()

    def _request(self, method: str, path: str, payload: dict | None = None) -> dict:
        url = self.base_url + path
        last_error: ToolkitError | None = None
        for _ in range(self.retries + 1):
            try:
                resp = self.session.request(method, url, json=payload, timeout=self.timeout)
            except requests.exceptions.Timeout:
                last_error = Timeout(f"{method} {url} exceeded {self.timeout}s")
                continue
            except requests.exceptions.RequestException as exc:
                last_error = RemoteUnavailable(f"{method} {url}: {exc}")
                continue
            if 500 <= resp.status_code < 600:
                last_error = RemoteUnavailable(f"{method} {url}: HTTP {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise ProtocolError(f"{method} {url}: HTTP {resp.status_code}")
            try:
                body = resp.json()
            except (json.JSONDecodeError, ValueError) as exc:
                raise ProtocolError(f"{method} {url}: non-JSON body: {exc}") from None
            if not isinstance(body, dict):
                raise ProtocolError(f"{method} {url}: body is {type(body).__name__}, not object")
            return body
        assert last_error is not None
        raise last_error

    def health(self) -> dict:
        body = self._request("GET", "/v1/health")
        for key in ("model", "quantization"):
            if key not in body:
                raise ProtocolError(f"health response missing {key!r}")
        return body

    def classify(self, prompts: Sequence[PromptSample], task: str) -> list[Classification]:
        labels = task_labels(task)
        _check_prompts(prompts)
        out: list[Classification] = []
        for start in range(0, len(prompts), self.batch_cap):
            batch = prompts[start : start + self.batch_cap]
            payload = {"task": task, "prompts": [p.text for p in batch]}
            t0 = time.perf_counter()
            body = self._request("POST", "/v1/classify", payload)
            elapsed = time.perf_counter() - t0
            out.extend(self._parse_batch(body, labels, len(batch), elapsed))
        return out

    @staticmethod
    def _parse_batch(
        body: dict, labels: tuple[str, ...], n: int, elapsed: float
    ) -> list[Classification]:
        for key in ("labels", "scores", "compute_ms"):
            if key not in body:
                raise ProtocolError(f"classify response missing {key!r}")
        got_labels, got_scores = body["labels"], body["scores"]
        if len(got_labels) != n or len(got_scores) != n:
            raise ProtocolError(
                f"sent {n} prompts, got {len(got_labels)} labels / {len(got_scores)} scores"
            )
        compute_ms = float(body["compute_ms"])
        out = []
        for name, scores in zip(got_labels, got_scores):
            if name not in labels:
                raise ProtocolError(f"unknown label {name!r} for task vocabulary {labels}")
            if len(scores) != len(labels):
                raise ProtocolError(f"{len(scores)} scores for {len(labels)} classes")
            try:
                out.append(
                    Classification(
                        label=name,
                        label_index=labels.index(name),
                        scores=tuple(float(v) for v in scores),
                        latency=elapsed,
                        source="remote",
                        compute_ms=compute_ms,
                    )
                )
            except ValueError as exc:
                raise ProtocolError(str(exc)) from None
        return out

    def embed(self, prompt: PromptSample) -> np.ndarray:
        body = self._request("POST", "/v1/embed", {"prompt": prompt.text})
        for key in ("n_tokens", "dim", "data"):
            if key not in body:
                raise ProtocolError(f"embed response missing {key!r}")
        dim = int(body["dim"])
        if dim != EMBED_DIM:
            raise DimensionError(f"server embedding width {dim}, expected {EMBED_DIM}")
        n_tokens = int(body["n_tokens"])
        if n_tokens < 1:
            raise ProtocolError(f"n_tokens {n_tokens} < 1")
        data = np.asarray(body["data"], dtype=np.float64)
        if data.shape != (n_tokens * dim,):
            raise ProtocolError(f"{data.size} values for {n_tokens}x{dim} matrix")
        return data.reshape(n_tokens, dim)


class SyntheticEmbedder:
    """Seeded stand-in for the embed endpoint; no server required.

    The matrix depends only on (seed, prompt text), so the same prompt
    always embeds identically. Token count is the whitespace token count.
    """

    def __init__(self, seed: int = 0, dim: int = EMBED_DIM):
        self.seed = seed
        self.dim = dim

    def embed(self, prompt: PromptSample) -> np.ndarray:
        n_tokens = max(1, len(prompt.text.split()))
        rng = np.random.default_rng([self.seed & 0xFFFFFFFF, zlib.crc32(prompt.text.encode("utf-8"))])
        return rng.standard_normal((n_tokens, self.dim))


@dataclass(frozen=True)
class LatencyRow:
    window_size: int
    samples: int
    mean: float
    median: float
    p95: float


@dataclass
class LatencyTable:
    """Latency summary per window size plus a monotonicity verdict."""

    rows: list[LatencyRow]
    verdict: str = field(init=False)

    def __post_init__(self) -> None:
        means = [r.mean for r in self.rows]
        if all(b > a for a, b in zip(means, means[1:])):
            self.verdict = "increasing"
        elif all(b == a for a, b in zip(means, means[1:])):
            self.verdict = "flat"
        elif all(b < a for a, b in zip(means, means[1:])):
            self.verdict = "decreasing"
        else:
            self.verdict = "mixed"

    def to_csv(self) -> str:
        lines = ["window_size,samples,mean_s,median_s,p95_s"]
        for r in self.rows:
            lines.append(f"{r.window_size},{r.samples},{r.mean:.9f},{r.median:.9f},{r.p95:.9f}")
        return "\n".join(lines) + "\n"


def synthetic_prompt(window_size: int, rng: np.random.Generator, pseudo: int = 0) -> PromptSample:
    """A plausible benign window textualized column-wise, for benchmarks."""
    t0 = float(rng.uniform(0.0, 1000.0))
    x, y = rng.uniform(0.0, 1000.0, size=2)
    speed = float(rng.uniform(5.0, 15.0))
    theta = float(rng.uniform(0.0, 2.0 * np.pi))
    records = []
    for i in range(window_size):
        t = t0 + float(i)
        records.append(
            ProcessedRecord(
                sender_id=pseudo,
                sender_pseudo=pseudo,
                message_id=i,
                label=AttackClass.GENUINE,
                rcv_time=round3(t + 0.005),
                send_time=round3(t),
                pos_x=round3(x + speed * np.cos(theta) * i),
                pos_y=round3(y + speed * np.sin(theta) * i),
                spd=round3(speed),
                acl=0.0,
                hed_x=round3(np.cos(theta)),
                hed_y=round3(np.sin(theta)),
            )
        )
    return textualize_columnwise(BsmWindow.from_records(records))


def bench_latency(
    classifier: Classifier,
    window_sizes: Sequence[int],
    samples_per_size: int = 20,
    seed: int = 0,
    task: str = "binary",
) -> LatencyTable:
    """Classify seeded synthetic prompts per window size; summarize latency."""
    if len(window_sizes) == 0:
        raise BenchConfigError("no window sizes given")
    if samples_per_size < 5:
        raise BenchConfigError(f"need at least 5 samples per size, got {samples_per_size}")
    sizes = sorted(window_sizes)
    rng = np.random.default_rng(seed)
    rows = []
    for n in sizes:
        prompts = [synthetic_prompt(n, rng, pseudo=i) for i in range(samples_per_size)]
        results = classifier.classify(prompts, task)
        lat = [c.latency for c in results]
        rows.append(
            LatencyRow(
                window_size=n,
                samples=len(lat),
                mean=statistics.fmean(lat),
                median=statistics.median(lat),
                p95=float(np.percentile(lat, 95)),
            )
        )
    return LatencyTable(rows=rows)
