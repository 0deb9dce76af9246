"""Baseline classifier: logistic regression trained with mini-batch SGD.

Weights start at zero (the objective is convex, so initialization needs no
randomness), each epoch reshuffles with the seeded PCG64 generator, the last
partial batch is trained rather than dropped, and the learning rate follows
a step schedule. Training is single-threaded and bit-deterministic for a
fixed seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .losses import ScoredBatch, bce, _sigmoid

__all__ = [
    "LinearModel",
    "TrainConfig",
    "FoldSplit",
    "lr_at",
    "predict",
    "predict_batch",
    "sgd_train",
    "kfold_split",
    "save_model",
    "load_model",
    "MODEL_FORMAT_VERSION",
]

MODEL_FORMAT_VERSION = "linmodel v1"


@dataclass(frozen=True)
class LinearModel:
    weights: np.ndarray
    bias: float

    def __post_init__(self) -> None:
        weights = np.asarray(self.weights, dtype=np.float64)
        if weights.ndim != 1:
            raise ValueError("model weights must be 1-D")
        if not (np.all(np.isfinite(weights)) and math.isfinite(self.bias)):
            raise ValueError("model parameters must be finite")
        object.__setattr__(self, "weights", weights)

    @classmethod
    def zeros(cls, dim: int) -> "LinearModel":
        return cls(weights=np.zeros(dim, dtype=np.float64), bias=0.0)

    @property
    def dim(self) -> int:
        return int(self.weights.size)


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.001
    epochs: int = 20
    batch_size: int = 16
    decay_factor: float = 0.1
    decay_every: int = 20
    seed: int = 0

    def __post_init__(self) -> None:
        if self.lr0 < 0 or not math.isfinite(self.lr0):
            raise ValueError(f"lr0 must be finite and nonnegative, got {self.lr0}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be nonnegative, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if not 0 < self.decay_factor <= 1:
            raise ValueError(
                f"decay_factor must lie in (0, 1], got {self.decay_factor}"
            )
        if self.decay_every < 1:
            raise ValueError(f"decay_every must be positive, got {self.decay_every}")


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Step schedule: lr0 * decay_factor^floor(epoch / decay_every)."""
    if epoch < 0:
        raise ValueError(f"epoch must be nonnegative, got {epoch}")
    return cfg.lr0 * cfg.decay_factor ** (epoch // cfg.decay_every)


def predict(model: LinearModel, features: Sequence[float] | np.ndarray) -> float:
    """Probability sigma(w.x + b) for one feature vector."""
    x = np.asarray(features, dtype=np.float64)
    if x.shape != (model.dim,):
        raise ValueError(f"feature length {x.shape} does not match model ({model.dim})")
    z = float(x @ model.weights + model.bias)
    return float(_sigmoid(np.array([z]))[0])


def predict_batch(model: LinearModel, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.dim:
        raise ValueError(f"feature matrix shape {x.shape} does not match model")
    return _sigmoid(x @ model.weights + model.bias)


def _stack_records(
    records: Iterable[tuple[Sequence[float], int]]
) -> tuple[np.ndarray, np.ndarray]:
    features, labels = [], []
    for feat, label in records:
        features.append(np.asarray(feat, dtype=np.float64))
        labels.append(float(label))
    if not features:
        raise ValueError("training set is empty")
    dim = features[0].shape
    if any(f.shape != dim for f in features):
        raise ValueError("inconsistent feature lengths in training set")
    return np.stack(features), np.asarray(labels)


def sgd_train(
    records: Iterable[tuple[Sequence[float], int]], cfg: TrainConfig
) -> tuple[LinearModel, list[float]]:
    """Train logistic regression with mini-batch SGD and BCE-with-logits.

    Returns the final model and the per-epoch mean training loss (computed
    on the pre-update predictions seen during the epoch).
    """
    x, y = _stack_records(records)
    n = x.shape[0]
    w = np.zeros(x.shape[1], dtype=np.float64)
    b = 0.0
    rng = np.random.default_rng(cfg.seed)
    history: list[float] = []
    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg)
        perm = rng.permutation(n)
        loss_total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            xb, yb = x[idx], y[idx]
            batch = ScoredBatch.from_logits(yb, xb @ w + b)
            result = bce(batch, with_gradient=True)
            w -= lr * (xb.T @ result.gradient)
            b -= lr * float(result.gradient.sum())
            loss_total += result.value * idx.size
        history.append(loss_total / n)
    return LinearModel(weights=w, bias=b), history


@dataclass(frozen=True)
class FoldSplit:
    """K disjoint index sets covering 0..n-1 with sizes differing by <= 1."""

    folds: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        folds = tuple(tuple(int(i) for i in fold) for fold in self.folds)
        object.__setattr__(self, "folds", folds)
        flat = [i for fold in folds for i in fold]
        if len(set(flat)) != len(flat) or set(flat) != set(range(len(flat))):
            raise ValueError("folds must disjointly cover 0..n-1")
        sizes = [len(fold) for fold in folds]
        if sizes and max(sizes) - min(sizes) > 1:
            raise ValueError("fold sizes must differ by at most 1")

    @property
    def k(self) -> int:
        return len(self.folds)

    @property
    def n(self) -> int:
        return sum(len(fold) for fold in self.folds)


def kfold_split(n: int, k: int, seed: int) -> FoldSplit:
    """Shuffle 0..n-1 with the seeded generator and deal k contiguous folds."""
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    if not 2 <= k <= n:
        raise ValueError(f"k must lie in [2, n], got k={k}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    sizes = [n // k + (1 if i < n % k else 0) for i in range(k)]
    folds, start = [], 0
    for size in sizes:
        folds.append(tuple(int(i) for i in perm[start : start + size]))
        start += size
    return FoldSplit(folds=tuple(folds))


def save_model(model: LinearModel, path: str | Path) -> None:
    """Versioned text format: header, bias, then one weight per line, all
    with full round-trip precision."""
    lines = [f"{MODEL_FORMAT_VERSION} {model.dim}", repr(model.bias)]
    lines.extend(repr(float(w)) for w in model.weights)
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_model(path: str | Path) -> LinearModel:
    lines = Path(path).read_text(encoding="ascii").splitlines()
    if not lines:
        raise ValueError(f"{path}: empty model file")
    header = lines[0].rsplit(" ", 1)
    if len(header) != 2 or header[0] != MODEL_FORMAT_VERSION:
        raise ValueError(f"{path}: unrecognized model header {lines[0]!r}")
    dim = int(header[1])
    if len(lines) != dim + 2:
        raise ValueError(
            f"{path}: expected {dim + 2} lines for dimension {dim}, got {len(lines)}"
        )
    bias = float(lines[1])
    weights = np.array([float(v) for v in lines[2:]], dtype=np.float64)
    return LinearModel(weights=weights, bias=bias)
