"""
4-4-3 perceptron (ReLU hidden layer, softmax output, cross-entropy loss)
evaluated through a signed-MVM backend, with on-chip backpropagation via
the transpose pass.

The network has no biases. Stored weights are normalized to ``[-1, 1]``;
``scale1`` and ``scale2`` multiply the pre-activations electronically, so
``z = scale1 · W1 x`` and ``logits = scale2 · W2 h``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from scipy.optimize import minimize

from .crossbar import CrossbarConfig
from .errors import ConfigError, DimensionMismatch
from .signed_mvm import IdealBackend, make_backend, mvm_signed_full, mvm_signed_weights, split_weights

SPECIES = ("setosa", "versicolor", "virginica")
FEATURES = ("sepal_length", "sepal_width", "petal_length", "petal_width")
LOG_CLAMP = 1e-12


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple = (4, 4, 3)
    activations: tuple = ("relu", "softmax")
    loss: str = "cross_entropy"

    def __post_init__(self) -> None:
        if len(self.layer_sizes) != 3:
            raise ConfigError("only two-layer perceptrons are supported")
        if tuple(self.activations) != ("relu", "softmax") or self.loss != "cross_entropy":
            raise ConfigError("supported network: relu hidden layer, softmax output, cross-entropy")

    @property
    def parameter_count(self) -> int:
        a, b, c = self.layer_sizes
        return a * b + b * c


@dataclass(frozen=True)
class MlpWeights:
    w1: np.ndarray
    w2: np.ndarray
    scale1: float = 1.0
    scale2: float = 4.0

    def __post_init__(self) -> None:
        for name in ("w1", "w2"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if self.w1.shape[0] != self.w2.shape[1]:
            raise DimensionMismatch(f"w1 {self.w1.shape} and w2 {self.w2.shape} do not chain")
        if not (self.scale1 > 0 and self.scale2 > 0):
            raise ConfigError("weight scales must be positive")

    @classmethod
    def init(cls, spec: MlpSpec, rng, scale1: float = 1.0, scale2: float = 4.0) -> "MlpWeights":
        """
        Seeded initial weights: ``W1`` uniform in [0, 0.5], ``W2`` in [-0.5, 0.5].

        Nonnegative first-layer weights keep every hidden unit active on the
        nonnegative inputs at the start of training.
        """
        a, b, c = spec.layer_sizes
        return cls(rng.uniform(0.0, 0.5, (b, a)), rng.uniform(-0.5, 0.5, (c, b)), scale1, scale2)

    @classmethod
    def zeros(cls, spec: MlpSpec) -> "MlpWeights":
        a, b, c = spec.layer_sizes
        return cls(np.zeros((b, a)), np.zeros((c, b)))

    @cached_property
    def signed1(self):
        return split_weights(self.w1)

    @cached_property
    def signed2(self):
        return split_weights(self.w2)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.w2.ravel()])

    def with_flat(self, p) -> "MlpWeights":
        p = np.asarray(p, dtype=float)
        k = self.w1.size
        return replace(self, w1=p[:k].reshape(self.w1.shape), w2=p[k:].reshape(self.w2.shape))

    def to_dict(self) -> dict:
        return {"w1": self.w1.tolist(), "w2": self.w2.tolist(),
                "scale1": self.scale1, "scale2": self.scale2}

    @classmethod
    def from_dict(cls, d: dict) -> "MlpWeights":
        return cls(np.asarray(d["w1"]), np.asarray(d["w2"]), float(d["scale1"]), float(d["scale2"]))


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        f = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels, dtype=int)
        if f.ndim != 2 or y.shape != (f.shape[0],):
            raise DimensionMismatch("features must be (n, d) with one label per row")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.labels.size

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.features[idx], self.labels[idx])


def load_iris(path: str | Path | None = None) -> Dataset:
    """
    Read an Iris CSV (``sepal_length,sepal_width,petal_length,petal_width,species``).

    Without ``path`` the bundled copy of the 150-sample dataset is used.
    """
    if path is None:
        text = resources.files("mrrxbar").joinpath("data/iris.csv").read_text()
    else:
        text = Path(path).read_text()
    reader = csv.DictReader(io.StringIO(text))
    want = list(FEATURES) + ["species"]
    if reader.fieldnames is None or [h.strip() for h in reader.fieldnames] != want:
        raise ConfigError(f"Iris CSV header must be {','.join(want)}, got {reader.fieldnames}")
    feats, labels = [], []
    for k, row in enumerate(reader, start=2):
        sp = row["species"].strip()
        if sp.startswith("Iris-"):
            sp = sp[5:]
        if sp not in SPECIES:
            raise ConfigError(f"line {k}: unknown species {row['species']!r}")
        feats.append([float(row[f]) for f in FEATURES])
        labels.append(SPECIES.index(sp))
    if not labels:
        raise ConfigError("dataset is empty")
    return Dataset(np.array(feats), np.array(labels))


@dataclass(frozen=True)
class MaxNormalizer:
    """Divide each feature by its training-split maximum, then clip to [0, 1]."""

    maxima: np.ndarray

    @classmethod
    def fit(cls, data: Dataset) -> "MaxNormalizer":
        m = data.features.max(axis=0)
        if np.any(m <= 0):
            raise ConfigError("features must be positive to normalize by their maximum")
        return cls(m)

    def __call__(self, data: Dataset) -> Dataset:
        return Dataset(np.clip(data.features / self.maxima, 0.0, 1.0), data.labels)


def stratified_split(data: Dataset, n_train: int = 50, seed: int = 0):
    """Seeded class-balanced split; returns ``(train, test)``."""
    rng = np.random.default_rng(seed)
    classes = np.unique(data.labels)
    if not 0 < n_train < len(data):
        raise ConfigError(f"n_train must be in (0, {len(data)})")
    base, extra = divmod(n_train, classes.size)
    train_idx, test_idx = [], []
    for k, c in enumerate(classes):
        idx = rng.permutation(np.flatnonzero(data.labels == c))
        take = base + (1 if k < extra else 0)
        train_idx.extend(idx[:take])
        test_idx.extend(idx[take:])
    return data.subset(sorted(train_idx)), data.subset(sorted(test_idx))


@dataclass(frozen=True)
class ForwardCache:
    x: np.ndarray
    z1: np.ndarray
    h: np.ndarray
    logits: np.ndarray


def softmax(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    e = np.exp(v - v.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _input_scale(v):
    # crossbar inputs are powers in [0, 1]; larger vectors are scaled down electronically
    return np.maximum(np.max(np.abs(v), axis=0), 1.0)


def forward(spec: MlpSpec, weights: MlpWeights, x, backend=None):
    """
    Returns ``(y, cache)`` for one normalized feature vector.

    Both layers use two-pass signed MVM: ``x`` is nonnegative and the
    hidden vector is a ReLU output.
    """
    backend = backend if backend is not None else IdealBackend()
    x = np.asarray(x, dtype=float)
    z1 = weights.scale1 * mvm_signed_weights(weights.signed1, x, backend, slot="w1")
    h = np.maximum(z1, 0.0)
    hs = _input_scale(h)
    logits = weights.scale2 * hs * mvm_signed_weights(weights.signed2, h / hs, backend, slot="w2")
    return softmax(logits), ForwardCache(x, z1, h, logits)


def forward_batch(weights: MlpWeights, X, backend=None) -> np.ndarray:
    """Class probabilities for every row of ``X``, all samples in one backend call per pass."""
    backend = backend if backend is not None else IdealBackend()
    xt = np.asarray(X, dtype=float).T
    z1 = weights.scale1 * mvm_signed_weights(weights.signed1, xt, backend, slot="w1")
    h = np.maximum(z1, 0.0)
    hs = _input_scale(h)
    logits = weights.scale2 * hs * mvm_signed_weights(weights.signed2, h / hs, backend, slot="w2")
    return softmax(logits.T)


def dense_forward(weights: MlpWeights, X):
    """Plain numpy forward for a batch, rows of ``X`` are samples."""
    z1 = weights.scale1 * np.asarray(X) @ weights.w1.T
    h = np.maximum(z1, 0.0)
    logits = weights.scale2 * h @ weights.w2.T
    return softmax(logits), z1, h


def loss_and_output_delta(y, target_one_hot):
    """Cross-entropy ``−Σ t log y`` (``y`` clamped at 1e-12) and ``δ2 = y − t``."""
    y = np.asarray(y, dtype=float)
    t = np.asarray(target_one_hot, dtype=float)
    loss = float(-np.sum(t * np.log(np.maximum(y, LOG_CLAMP))))
    return loss, y - t


def backprop_deltas(weights: MlpWeights, delta2, cache: ForwardCache, backend=None) -> np.ndarray:
    """
    ``δ1 = scale2 · (W2ᵀ δ2) ⊙ ReLU'(z1)``, with the transpose product taken
    by the backend's backward pass (four passes, ``δ2`` is signed).
    """
    backend = backend if backend is not None else IdealBackend()
    d2 = np.asarray(delta2, dtype=float)
    ds = _input_scale(d2)
    back = ds * mvm_signed_full(weights.signed2, d2 / ds, backend, transpose=True, slot="w2")
    return weights.scale2 * back * (cache.z1 > 0)


def gradients(weights: MlpWeights, cache: ForwardCache, delta1, delta2):
    """Outer products ``(scale1 · δ1 xᵀ, scale2 · δ2 hᵀ)``, computed electronically."""
    g1 = weights.scale1 * np.outer(delta1, cache.x)
    g2 = weights.scale2 * np.outer(delta2, cache.h)
    return g1, g2


def loss_of(spec: MlpSpec, weights: MlpWeights, x, label: int, backend=None) -> float:
    y, _ = forward(spec, weights, x, backend)
    return loss_and_output_delta(y, np.eye(spec.layer_sizes[-1])[label])[0]


UpdateMode = Literal["weight_domain", "phase_domain"]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 500
    seed: int = 42
    backend: str = "ideal"
    update_mode: UpdateMode = "weight_domain"
    scale1: float = 1.0
    scale2: float = 4.0
    crossbar: Optional[CrossbarConfig] = None

    def __post_init__(self) -> None:
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be non-negative")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.backend not in ("ideal", "crossbar"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.update_mode not in ("weight_domain", "phase_domain"):
            raise ConfigError(f"unknown update_mode {self.update_mode!r}")


def sgd_step(weights: MlpWeights, grads, config: TrainConfig, backend=None) -> MlpWeights:
    """
    One SGD update; the normalization scales are left untouched.

    ``weight_domain``: ``W ← clip(W − lr·grad, −1, 1)``; a crossbar backend
    re-programs the new ``W'`` by feedback on its next use.
    ``phase_domain``: heaters move along the analytic drop slope and the
    weights become whatever the array now realizes.
    """
    g1, g2 = grads
    lr = config.learning_rate
    if config.update_mode == "weight_domain" or lr == 0:
        return replace(weights, w1=np.clip(weights.w1 - lr * g1, -1.0, 1.0),
                       w2=np.clip(weights.w2 - lr * g2, -1.0, 1.0))
    if not hasattr(backend, "phase_step"):
        raise ConfigError("phase_domain updates need a crossbar backend")
    # W = 2 W' - 1, so dL/dW' = 2 dL/dW
    new = []
    for slot, w, g in (("w1", weights.w1, g1), ("w2", weights.w2, g2)):
        backend.program(slot, split_weights(w).split_Wprime)
        wp = backend.phase_step(slot, 2.0 * g, lr)
        new.append(np.clip(2.0 * wp - 1.0, -1.0, 1.0))
    return replace(weights, w1=new[0], w2=new[1])


@dataclass(frozen=True)
class TrainResult:
    weights: MlpWeights
    losses: tuple
    correct_rates: tuple
    mvm_groups: int
    backend_calls: int

    @property
    def best_correct_rate(self) -> float:
        return max(self.correct_rates)

    @property
    def final_correct_rate(self) -> float:
        return self.correct_rates[-1]

    def curve_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["round", "loss", "correct_rate"])
        for r, (l, c) in enumerate(zip(self.losses, self.correct_rates)):
            w.writerow([r, f"{l:.12g}", f"{c:.12g}"])
        return buf.getvalue()


def evaluate(spec: MlpSpec, weights: MlpWeights, data: Dataset, backend=None):
    """Mean loss and correct rate over ``data``."""
    y = forward_batch(weights, data.features, backend)
    p = y[np.arange(len(data)), data.labels]
    loss = float(-np.mean(np.log(np.maximum(p, LOG_CLAMP))))
    return loss, float(np.mean(np.argmax(y, axis=1) == data.labels))


def build_backend(config: TrainConfig):
    return make_backend(config.backend, config.crossbar, seed=config.seed)


def train(spec: MlpSpec, dataset: Dataset, config: TrainConfig, backend=None,
          initial: MlpWeights | None = None) -> TrainResult:
    """
    Per-sample SGD on ``dataset`` (already normalized).

    Round 0 of the curve is the initial state; round ``r`` is evaluated on
    the training data after ``r`` passes. Each sample costs three
    optical-domain MVM groups: two forward layers and one transpose.
    """
    if len(dataset) == 0:
        raise ConfigError("dataset is empty")
    rng = np.random.default_rng(config.seed)
    backend = backend if backend is not None else build_backend(config)
    weights = initial if initial is not None else MlpWeights.init(
        spec, rng, config.scale1, config.scale2)
    eye = np.eye(spec.layer_sizes[-1])
    loss0, acc0 = evaluate(spec, weights, dataset, backend)
    losses, rates = [loss0], [acc0]
    groups = 0
    calls0 = backend.mvm_calls
    for _ in range(config.epochs):
        for n in rng.permutation(len(dataset)):
            x = dataset.features[n]
            y, cache = forward(spec, weights, x, backend)
            _, d2 = loss_and_output_delta(y, eye[dataset.labels[n]])
            d1 = backprop_deltas(weights, d2, cache, backend)
            groups += 3
            weights = sgd_step(weights, gradients(weights, cache, d1, d2), config, backend)
        l, a = evaluate(spec, weights, dataset, backend)
        losses.append(l)
        rates.append(a)
    return TrainResult(weights, tuple(losses), tuple(rates), groups, backend.mvm_calls - calls0)


@dataclass(frozen=True)
class BruteForceResult:
    grads: tuple
    forward_passes: int
    backend_calls: int


def brute_force_gradient(spec: MlpSpec, weights: MlpWeights, sample, backend=None,
                         eps: float = 1e-4) -> BruteForceResult:
    """
    One-sided finite differences of the loss, one full forward per parameter.

    Parameters at the ``+1`` boundary are perturbed downward so the weights
    stay representable. ``backend_calls`` is ``(P + 1) · F`` with ``F`` the
    backend calls of one forward.
    """
    if not eps > 0:
        raise ConfigError("eps must be positive")
    backend = backend if backend is not None else IdealBackend()
    x, label = sample
    start = backend.mvm_calls
    base = loss_of(spec, weights, x, label, backend)
    p = weights.flat()
    g = np.empty_like(p)
    for k in range(p.size):
        step = eps if p[k] + eps <= 1.0 else -eps
        q = p.copy()
        q[k] += step
        g[k] = (loss_of(spec, weights.with_flat(q), x, label, backend) - base) / step
    k1 = weights.w1.size
    grads = (g[:k1].reshape(weights.w1.shape), g[k1:].reshape(weights.w2.shape))
    return BruteForceResult(grads, p.size + 1, backend.mvm_calls - start)


@dataclass(frozen=True)
class InferenceResult:
    correct: int
    total: int
    confusion: np.ndarray

    @property
    def accuracy(self) -> float:
        return self.correct / self.total

    def to_dict(self) -> dict:
        return {"correct": self.correct, "total": self.total, "accuracy": self.accuracy,
                "confusion": self.confusion.tolist(), "classes": list(SPECIES)}


def infer_dataset(spec: MlpSpec, weights: MlpWeights, samples: Dataset, backend=None) -> InferenceResult:
    """Argmax classification; ``confusion[true, predicted]`` counts."""
    k = spec.layer_sizes[-1]
    conf = np.zeros((k, k), dtype=int)
    pred = np.argmax(forward_batch(weights, samples.features, backend), axis=1)
    np.add.at(conf, (samples.labels, pred), 1)
    return InferenceResult(int(np.trace(conf)), len(samples), conf)


def _batch_loss(p, X, T, shape1, l2):
    k = shape1[0] * shape1[1]
    w1 = p[:k].reshape(shape1)
    w2 = p[k:].reshape(T.shape[1], shape1[0])
    z = X @ w1.T
    h = np.maximum(z, 0.0)
    y = softmax(h @ w2.T)
    n = X.shape[0]
    f = -np.sum(T * np.log(np.maximum(y, LOG_CLAMP))) / n + l2 * np.sum(p * p)
    d2 = (y - T) / n
    d1 = (d2 @ w2) * (z > 0)
    grad = np.concatenate([(d1.T @ X).ravel(), (d2.T @ h).ravel()]) + 2.0 * l2 * p
    return f, grad


def train_ex_situ(spec: MlpSpec, data: Dataset, seed: int = 0, restarts: int = 5,
                  l2: float = 1e-4) -> MlpWeights:
    """
    Full-batch L-BFGS on a conventional computer, best of ``restarts``.

    The result is normalized for the crossbar: each matrix is divided by
    its largest magnitude, which moves into ``scale1`` / ``scale2``.
    """
    rng = np.random.default_rng(seed)
    a, b, c = spec.layer_sizes
    T = np.eye(c)[data.labels]
    best = None
    for _ in range(restarts):
        p0 = np.concatenate([rng.uniform(0.0, 0.5, a * b), rng.uniform(-0.5, 0.5, b * c)])
        res = minimize(_batch_loss, p0, args=(data.features, T, (b, a), l2), jac=True,
                       method="L-BFGS-B")
        if best is None or res.fun < best.fun:
            best = res
    w1 = best.x[: a * b].reshape(b, a)
    w2 = best.x[a * b:].reshape(c, b)
    m1 = float(np.max(np.abs(w1))) or 1.0
    m2 = float(np.max(np.abs(w2))) or 1.0
    return MlpWeights(w1 / m1, w2 / m2, m1, m2)
