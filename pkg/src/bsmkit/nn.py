"""Native dense classifiers: multinomial logistic regression and the dense
head over max-aggregated embeddings, trained with hand-rolled Adam.

Everything runs in float64 on numpy so analytic gradients can be checked
against central finite differences. Training with a fixed seed is
bit-reproducible; summation order is fixed and single-threaded.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from bsmkit.model import ToolkitError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class DimensionMismatch(ToolkitError):
    """Input width does not match the model's input dimension."""


class ShapeMismatch(ToolkitError):
    """Gradient shapes do not match parameter shapes."""


class EmptyDataset(ToolkitError):
    pass


class LabelOutOfRange(ToolkitError):
    pass


@dataclass(frozen=True)
class FeatureNetConfig:
    """Dense head defaults for the two classification settings."""

    input_dim: int = 4096
    hidden_dims: tuple[int, ...] = (256, 128, 64, 32)
    dropout: float = 0.2
    learning_rate: float = 0.0001
    epochs: int = 80
    batch_size: int = 32
    n_classes: int = 2

    @classmethod
    def binary_default(cls) -> "FeatureNetConfig":
        return cls()

    @classmethod
    def multiclass_default(cls) -> "FeatureNetConfig":
        return cls(epochs=150, batch_size=64, n_classes=9)


def softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


class Mlp:
    """Dense layers with rectified-linear activations and inverted dropout.

    layer_dims includes input and output: [in, h1, ..., out]. With no
    hidden layers this is multinomial logistic regression. Weights start
    uniform scaled by fan-in.
    """

    def __init__(self, layer_dims: list[int], seed: int = 0, dropout: float = 0.0):
        if len(layer_dims) < 2:
            raise ValueError("need at least input and output dims")
        if not 0.0 <= dropout < 1.0:
            raise ValueError(f"dropout {dropout} outside [0, 1)")
        self.layer_dims = list(layer_dims)
        self.dropout = dropout
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.params: list[np.ndarray] = []
        for fan_in, fan_out in zip(layer_dims, layer_dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.params.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
            self.params.append(np.zeros(fan_out))

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def n_classes(self) -> int:
        return self.layer_dims[-1]

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.input_dim:
            raise DimensionMismatch(f"input width {x.shape[1]}, expected {self.input_dim}")
        return x

    def forward(
        self, x: np.ndarray, train: bool = False, rng: np.random.Generator | None = None
    ) -> np.ndarray:
        """Class scores (logits). Dropout fires only in train mode, from the
        supplied generator; eval mode is deterministic."""
        scores, _ = self._forward_cached(x, train=train, rng=rng)
        return scores

    def _forward_cached(self, x, train=False, rng=None):
        x = self._check_input(x)
        if train and self.dropout > 0.0 and rng is None:
            raise ValueError("train-mode dropout needs a generator")
        cache = {"inputs": [], "masks": []}
        h = x
        for layer in range(self.n_layers):
            cache["inputs"].append(h)
            w, b = self.params[2 * layer], self.params[2 * layer + 1]
            z = h @ w + b
            if layer < self.n_layers - 1:
                h = np.maximum(z, 0.0)
                if train and self.dropout > 0.0:
                    mask = (rng.random(h.shape) >= self.dropout) / (1.0 - self.dropout)
                    h = h * mask
                else:
                    mask = None
                cache["masks"].append(mask)
            else:
                h = z
        return h, cache

    def loss_and_grads(
        self,
        x: np.ndarray,
        y: np.ndarray,
        train: bool = True,
        rng: np.random.Generator | None = None,
    ) -> tuple[float, list[np.ndarray]]:
        """Mean cross-entropy over the batch and gradients for every param."""
        y = np.asarray(y, dtype=int)
        scores, cache = self._forward_cached(x, train=train, rng=rng)
        m = scores.shape[0]
        probs = softmax(scores)
        eps = np.finfo(float).tiny
        loss = float(-np.log(probs[np.arange(m), y] + eps).mean())

        delta = probs.copy()
        delta[np.arange(m), y] -= 1.0
        delta /= m
        grads: list[np.ndarray] = [None] * len(self.params)
        for layer in range(self.n_layers - 1, -1, -1):
            h_in = cache["inputs"][layer]
            grads[2 * layer] = h_in.T @ delta
            grads[2 * layer + 1] = delta.sum(axis=0)
            if layer > 0:
                w = self.params[2 * layer]
                delta = delta @ w.T
                mask = cache["masks"][layer - 1]
                pre_act = cache["inputs"][layer]
                # inputs[layer] is post-ReLU (and post-mask); its nonzero
                # entries mark where the ReLU was active.
                delta = delta * (pre_act > 0.0)
                if mask is not None:
                    delta = delta * mask
        return loss, grads

    def predict_scores(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x, train=False)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return softmax(self.predict_scores(x))

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.predict_scores(x).argmax(axis=1)


def make_logreg(n_features: int, n_classes: int, seed: int = 0) -> Mlp:
    return Mlp([n_features, n_classes], seed=seed, dropout=0.0)


def make_featurenet(cfg: FeatureNetConfig, seed: int = 0) -> Mlp:
    dims = [cfg.input_dim, *cfg.hidden_dims, cfg.n_classes]
    return Mlp(dims, seed=seed, dropout=cfg.dropout)


@dataclass
class AdamState:
    """First/second moment accumulators; zero-initialized, step starts at 0."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS

    @classmethod
    def init(cls, params: list[np.ndarray]) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])


def adam_step(
    params: list[np.ndarray], grads: list[np.ndarray], state: AdamState, lr: float
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    if len(params) != len(grads):
        raise ShapeMismatch(f"{len(params)} params vs {len(grads)} grads")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeMismatch(f"param {p.shape} vs grad {g.shape}")
    t = state.step + 1
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(
        m=new_m, v=new_v, step=t, beta1=state.beta1, beta2=state.beta2, eps=state.eps
    )


def finite_diff_grad(loss_fn, params: list[np.ndarray], h: float = 1e-6) -> list[np.ndarray]:
    """Central-difference gradient estimate, one coordinate at a time."""
    if h <= 0:
        raise ValueError(f"h {h} must be positive")
    grads = []
    for i, p in enumerate(params):
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = loss_fn(params)
            flat[j] = orig - h
            down = loss_fn(params)
            flat[j] = orig
            gflat[j] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    shuffle: bool = True


@dataclass
class TrainResult:
    model: Mlp
    loss_curve: list[float]


def train(model: Mlp, x: np.ndarray, y: np.ndarray, cfg: TrainConfig) -> TrainResult:
    """Minimize cross-entropy with Adam; returns per-epoch mean loss.

    Shuffling and dropout masks are driven by one seeded generator, so a
    fixed seed reproduces the run bit-for-bit.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=int)
    if x.shape[0] == 0:
        raise EmptyDataset("no training samples")
    if y.min() < 0 or y.max() >= model.n_classes:
        raise LabelOutOfRange(f"labels outside [0, {model.n_classes})")
    if x.shape[0] != y.shape[0]:
        raise ShapeMismatch(f"{x.shape[0]} samples vs {y.shape[0]} labels")

    rng = np.random.default_rng(cfg.seed)
    state = AdamState.init(model.params)
    n = x.shape[0]
    curve = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        epoch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = model.loss_and_grads(x[idx], y[idx], train=True, rng=rng)
            model.params, state = adam_step(model.params, grads, state, cfg.learning_rate)
            epoch_losses.append(loss)
        curve.append(float(np.mean(epoch_losses)))
    return TrainResult(model=model, loss_curve=curve)


# ---------------------------------------------------------------------------
# Checkpoints: one JSON header line, then raw little-endian float64 payloads
# in parameter order.

def save_checkpoint(path: str | Path, model: Mlp, meta: dict | None = None) -> None:
    header = {
        "kind": "mlp",
        "layer_dims": model.layer_dims,
        "dropout": model.dropout,
        "seed": model.seed,
        "shapes": [list(p.shape) for p in model.params],
        "meta": meta or {},
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        for p in model.params:
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[Mlp, dict]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("kind") != "mlp":
            raise ValueError(f"not an mlp checkpoint: {header.get('kind')!r}")
        model = Mlp(header["layer_dims"], seed=header["seed"], dropout=header["dropout"])
        params = []
        for shape in header["shapes"]:
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            params.append(np.frombuffer(buf, dtype="<f8").reshape(shape).copy())
        model.params = params
    return model, header["meta"]
