"""Loss kernels and closed-form gradients for anchor training.

Classification losses accept logits or probabilities. Logit inputs go
through numerically stable forms (``max(z,0) - z*y + log1p(exp(-|z|))`` for
cross entropy, softplus/sigmoid identities for focal); probability inputs
are clamped to ``[eps, 1-eps]`` before any log. Gradients are hand-derived
with respect to whichever input the batch carries.

Reduction is ``mean`` by default so learning rates do not depend on batch
size; ``sum`` is available. Regression losses average over all four
components of every offset pair.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .matching import OffsetVector, offsets_to_array

__all__ = [
    "EPSILON",
    "ScoredBatch",
    "ClassWeights",
    "LossResult",
    "bce",
    "weighted_bce",
    "focal_loss",
    "mse",
    "smooth_l1",
    "gradient",
    "LOSS_KINDS",
]

EPSILON = 1e-12


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


@dataclass(frozen=True)
class ScoredBatch:
    """Binary labels paired with logits or probabilities (exactly one)."""

    labels: np.ndarray
    logits: np.ndarray | None = None
    probabilities: np.ndarray | None = None

    def __post_init__(self) -> None:
        labels = np.asarray(self.labels, dtype=np.float64)
        if labels.ndim != 1 or labels.size == 0:
            raise ValueError("batch labels must be a nonempty 1-D sequence")
        if not np.all((labels == 0.0) | (labels == 1.0)):
            raise ValueError("batch labels must be 0 or 1")
        object.__setattr__(self, "labels", labels)
        if (self.logits is None) == (self.probabilities is None):
            raise ValueError("supply exactly one of logits or probabilities")
        if self.logits is not None:
            logits = np.asarray(self.logits, dtype=np.float64)
            if logits.shape != labels.shape:
                raise ValueError("logits and labels must have equal length")
            if not np.all(np.isfinite(logits)):
                raise ValueError("logits must be finite")
            object.__setattr__(self, "logits", logits)
        else:
            probs = np.asarray(self.probabilities, dtype=np.float64)
            if probs.shape != labels.shape:
                raise ValueError("probabilities and labels must have equal length")
            if not np.all(np.isfinite(probs)) or probs.min() < 0 or probs.max() > 1:
                raise ValueError("probabilities must lie in [0, 1]")
            object.__setattr__(
                self, "probabilities", np.clip(probs, EPSILON, 1.0 - EPSILON)
            )

    @classmethod
    def from_logits(cls, labels, logits) -> "ScoredBatch":
        return cls(labels=np.asarray(labels), logits=np.asarray(logits))

    @classmethod
    def from_probabilities(cls, labels, probabilities) -> "ScoredBatch":
        return cls(labels=np.asarray(labels), probabilities=np.asarray(probabilities))

    @property
    def n(self) -> int:
        return int(self.labels.size)

    @property
    def n_pos(self) -> int:
        return int(self.labels.sum())

    @property
    def n_neg(self) -> int:
        return self.n - self.n_pos

    @property
    def probs(self) -> np.ndarray:
        """Probabilities, derived from logits when needed (clamped)."""
        if self.probabilities is not None:
            return self.probabilities
        return np.clip(_sigmoid(self.logits), EPSILON, 1.0 - EPSILON)

    @property
    def scores(self) -> np.ndarray:
        """Raw ranking scores: logits when present, else probabilities."""
        return self.logits if self.logits is not None else self.probabilities


@dataclass(frozen=True)
class ClassWeights:
    """Per-class loss weights; the default rule counters class imbalance
    with w_pos = (#negatives)/(#total)."""

    w_pos: float
    w_neg: float

    def __post_init__(self) -> None:
        if self.w_pos < 0 or self.w_neg < 0:
            raise ValueError("class weights must be nonnegative")
        if self.w_pos + self.w_neg <= 0:
            raise ValueError("class weights must not both be zero")

    @classmethod
    def from_counts(cls, n_pos: int, n_neg: int) -> "ClassWeights":
        total = n_pos + n_neg
        if total <= 0:
            raise ValueError("class counts must be positive")
        w_pos = n_neg / total
        return cls(w_pos=w_pos, w_neg=1.0 - w_pos)

    @classmethod
    def from_batch(cls, batch: ScoredBatch) -> "ClassWeights":
        return cls.from_counts(batch.n_pos, batch.n_neg)


@dataclass(frozen=True)
class LossResult:
    value: float
    gradient: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not math.isfinite(self.value):
            raise ValueError(f"loss value must be finite, got {self.value}")


def _reduce(elements: np.ndarray, reduction: str) -> float:
    if reduction == "mean":
        return float(elements.mean())
    if reduction == "sum":
        return float(elements.sum())
    raise ValueError(f"unknown reduction {reduction!r}")


def _grad_scale(n_elements: int, reduction: str) -> float:
    return 1.0 / n_elements if reduction == "mean" else 1.0


def _bce_elements(batch: ScoredBatch) -> np.ndarray:
    y = batch.labels
    if batch.logits is not None:
        z = batch.logits
        return np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    p = batch.probabilities
    return y * (-np.log(p)) + (1.0 - y) * (-np.log1p(-p))


def _bce_gradient(batch: ScoredBatch, scale: float) -> np.ndarray:
    y = batch.labels
    if batch.logits is not None:
        return (_sigmoid(batch.logits) - y) * scale
    p = batch.probabilities
    return (-y / p + (1.0 - y) / (1.0 - p)) * scale


def bce(
    batch: ScoredBatch, *, reduction: str = "mean", with_gradient: bool = False
) -> LossResult:
    """Binary cross entropy: mean of -y ln(p) - (1-y) ln(1-p)."""
    value = _reduce(_bce_elements(batch), reduction)
    grad = None
    if with_gradient:
        grad = _bce_gradient(batch, _grad_scale(batch.n, reduction))
    return LossResult(value=value, gradient=grad)


def weighted_bce(
    batch: ScoredBatch,
    weights: ClassWeights | None = None,
    *,
    reduction: str = "mean",
    with_gradient: bool = False,
) -> LossResult:
    """Class-weighted cross entropy: -w_pos y ln(p) - w_neg (1-y) ln(1-p).

    When ``weights`` is omitted they follow the imbalance rule computed on
    this batch; pass explicit weights to pin dataset-level values.
    """
    if weights is None:
        weights = ClassWeights.from_batch(batch)
    w = np.where(batch.labels == 1.0, weights.w_pos, weights.w_neg)
    value = _reduce(w * _bce_elements(batch), reduction)
    grad = None
    if with_gradient:
        grad = w * _bce_gradient(batch, _grad_scale(batch.n, reduction))
    return LossResult(value=value, gradient=grad)


def focal_loss(
    batch: ScoredBatch,
    alpha: float = 0.1,
    gamma: float = 2.0,
    *,
    reduction: str = "mean",
    with_gradient: bool = False,
) -> LossResult:
    """Focal loss: -a (1-p)^g ln(p) on positives, -(1-a) p^g ln(1-p) on
    negatives, with the balance factor on the positive class."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if gamma < 0.0:
        raise ValueError(f"gamma must be nonnegative, got {gamma}")
    y = batch.labels
    pos = y == 1.0
    if batch.logits is not None:
        z = batch.logits
        p = _sigmoid(z)
        one_minus_p = _sigmoid(-z)
        log_p = -_softplus(-z)
        log_1mp = -_softplus(z)
    else:
        p = batch.probabilities
        one_minus_p = 1.0 - p
        log_p = np.log(p)
        log_1mp = np.log1p(-p)
    elements = np.where(
        pos,
        alpha * one_minus_p**gamma * (-log_p),
        (1.0 - alpha) * p**gamma * (-log_1mp),
    )
    value = _reduce(elements, reduction)
    grad = None
    if with_gradient:
        scale = _grad_scale(batch.n, reduction)
        if batch.logits is not None:
            grad_pos = -alpha * one_minus_p**gamma * (gamma * p * (-log_p) + one_minus_p)
            grad_neg = (1.0 - alpha) * p**gamma * (p + gamma * one_minus_p * (-log_1mp))
        else:
            if gamma == 0.0:
                grad_pos = -alpha / p
                grad_neg = (1.0 - alpha) / one_minus_p
            else:
                grad_pos = (
                    alpha * gamma * one_minus_p ** (gamma - 1.0) * log_p
                    - alpha * one_minus_p**gamma / p
                )
                grad_neg = (
                    -(1.0 - alpha) * gamma * p ** (gamma - 1.0) * log_1mp
                    + (1.0 - alpha) * p**gamma / one_minus_p
                )
        grad = np.where(pos, grad_pos, grad_neg) * scale
    return LossResult(value=value, gradient=grad)


def _regression_deltas(
    pred: Sequence[OffsetVector] | np.ndarray,
    target: Sequence[OffsetVector] | np.ndarray,
) -> np.ndarray:
    p = offsets_to_array(pred)
    t = offsets_to_array(target)
    if p.shape[0] == 0:
        raise ValueError("regression loss needs at least one offset pair")
    if p.shape != t.shape:
        raise ValueError(
            f"prediction/target length mismatch: {p.shape[0]} vs {t.shape[0]}"
        )
    return p - t


def mse(
    pred: Sequence[OffsetVector] | np.ndarray,
    target: Sequence[OffsetVector] | np.ndarray,
    *,
    reduction: str = "mean",
    with_gradient: bool = False,
) -> LossResult:
    """Mean squared error over all 4n offset components."""
    d = _regression_deltas(pred, target)
    value = _reduce(d * d, reduction)
    grad = None
    if with_gradient:
        grad = 2.0 * d * _grad_scale(d.size, reduction)
    return LossResult(value=value, gradient=grad)


def smooth_l1(
    pred: Sequence[OffsetVector] | np.ndarray,
    target: Sequence[OffsetVector] | np.ndarray,
    beta: float = 1.0,
    *,
    reduction: str = "mean",
    with_gradient: bool = False,
) -> LossResult:
    """Huber-style loss: 0.5 d^2 / beta inside |d| < beta, |d| - beta/2 outside."""
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    d = _regression_deltas(pred, target)
    a = np.abs(d)
    quad = a < beta
    elements = np.where(quad, 0.5 * d * d / beta, a - 0.5 * beta)
    value = _reduce(elements, reduction)
    grad = None
    if with_gradient:
        scale = _grad_scale(d.size, reduction)
        grad = np.where(quad, d / beta, np.sign(d)) * scale
    return LossResult(value=value, gradient=grad)


LOSS_KINDS = ("bce", "weighted_bce", "focal", "mse", "smooth_l1")


def gradient(kind: str, *args, **params) -> np.ndarray:
    """Closed-form gradient of the named loss with respect to its input."""
    dispatch = {
        "bce": bce,
        "weighted_bce": weighted_bce,
        "focal": focal_loss,
        "mse": mse,
        "smooth_l1": smooth_l1,
    }
    if kind not in dispatch:
        raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")
    return dispatch[kind](*args, with_gradient=True, **params).gradient
