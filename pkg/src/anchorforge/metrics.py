"""Evaluation metrics: threshold accuracy, rank-based AUC, pixel IoU, and
single-best-anchor detection scoring.

The ROC AUC is the Mann-Whitney statistic computed from average ranks, which
counts tied (positive, negative) pairs as half wins; it therefore agrees
exactly with the O(n^2) pairwise definition. Thresholding is inclusive
(score >= threshold predicts positive).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .geometry import Box, BoxSequence, _as_box_list, iou
from .losses import ScoredBatch
from .matching import (
    OffsetVector,
    TargetAssignment,
    decode_offsets,
    offsets_to_array,
)

__all__ = [
    "DegenerateLabelsError",
    "ConfusionCounts",
    "EvalReport",
    "BinaryMask",
    "accuracy",
    "confusion",
    "roc_auc",
    "pixel_iou",
    "segmentation_report",
    "detection_top1_eval",
    "DetectionEval",
    "EVAL_CSV_HEADER",
]

EVAL_CSV_HEADER = "accuracy,auc,iou,threshold,n"


class DegenerateLabelsError(ValueError):
    """Raised when AUC is requested for a single-class batch."""


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self) -> None:
        for name in ("tp", "fp", "tn", "fn"):
            if getattr(self, name) < 0:
                raise ValueError(f"confusion count {name} must be nonnegative")

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _fmt6(value: float) -> str:
    return f"{value:.6f}"


@dataclass(frozen=True)
class EvalReport:
    """Metric bundle for one evaluation; absent metrics stay ``None``."""

    accuracy: float | None
    auc: float | None
    iou: float | None
    threshold: float
    n: int

    def __post_init__(self) -> None:
        for name in ("accuracy", "auc", "iou"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise ValueError(f"report field {name} must lie in [0, 1], got {value}")
        if self.n < 1:
            raise ValueError("report sample count must be positive")

    def to_json_line(self) -> str:
        """Single-line JSON with fixed field order and 6-decimal values."""
        parts = []
        for name in ("accuracy", "auc", "iou"):
            value = getattr(self, name)
            parts.append(f'"{name}":' + ("null" if value is None else _fmt6(value)))
        parts.append(f'"threshold":{_fmt6(self.threshold)}')
        parts.append(f'"n":{self.n}')
        return "{" + ",".join(parts) + "}"

    def to_csv_row(self) -> str:
        cells = [
            "" if value is None else _fmt6(value)
            for value in (self.accuracy, self.auc, self.iou)
        ]
        cells.append(_fmt6(self.threshold))
        cells.append(str(self.n))
        return ",".join(cells)


def accuracy(scores: ScoredBatch, threshold: float = 0.5) -> float:
    """Fraction of samples whose thresholded probability matches the label."""
    predicted = scores.probs >= threshold
    return float(np.count_nonzero(predicted == (scores.labels == 1.0)) / scores.n)


def confusion(scores: ScoredBatch, threshold: float) -> ConfusionCounts:
    predicted = scores.probs >= threshold
    actual = scores.labels == 1.0
    return ConfusionCounts(
        tp=int(np.count_nonzero(predicted & actual)),
        fp=int(np.count_nonzero(predicted & ~actual)),
        tn=int(np.count_nonzero(~predicted & ~actual)),
        fn=int(np.count_nonzero(~predicted & actual)),
    )


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks, ties sharing the mean rank of their group."""
    _, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    starts = ends - counts
    group_rank = (starts + 1 + ends) / 2.0
    return group_rank[inverse]


def roc_auc(scores: ScoredBatch) -> float:
    """Probability that a random positive outranks a random negative.

    Equals the pairwise fraction of (positive, negative) pairs won, with
    ties counted as half. Raises :class:`DegenerateLabelsError` when the
    batch holds a single class.
    """
    n_pos, n_neg = scores.n_pos, scores.n_neg
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError(
            f"roc_auc needs both classes, got {n_pos} positives / {n_neg} negatives"
        )
    ranks = _average_ranks(scores.scores)
    pos_rank_sum = float(ranks[scores.labels == 1.0].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass(frozen=True)
class BinaryMask:
    """Raster of {0, 1} pixels, shape (height, width)."""

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self) -> None:
        pixels = np.asarray(self.pixels, dtype=np.uint8)
        if pixels.shape != (self.height, self.width):
            raise ValueError(
                f"mask pixels have shape {pixels.shape}, expected "
                f"({self.height}, {self.width})"
            )
        if pixels.size and pixels.max() > 1:
            raise ValueError("mask pixels must be 0 or 1")
        object.__setattr__(self, "pixels", pixels)

    @classmethod
    def from_array(cls, pixels: np.ndarray) -> "BinaryMask":
        pixels = np.asarray(pixels)
        return cls(width=pixels.shape[1], height=pixels.shape[0], pixels=pixels)

    @property
    def count(self) -> int:
        return int(self.pixels.sum())


def pixel_iou(pred: BinaryMask, gt: BinaryMask, *, strict_empty: bool = False) -> float:
    """Pixelwise intersection over union of two masks.

    Two empty masks agree perfectly and score 1.0 by default; pass
    ``strict_empty=True`` to make that case an error instead.
    """
    if (pred.width, pred.height) != (gt.width, gt.height):
        raise ValueError(
            f"mask dimension mismatch: {pred.width}x{pred.height} vs "
            f"{gt.width}x{gt.height}"
        )
    a = pred.pixels == 1
    b = gt.pixels == 1
    union = int(np.count_nonzero(a | b))
    if union == 0:
        if strict_empty:
            raise ValueError("pixel_iou of two empty masks")
        return 1.0
    return int(np.count_nonzero(a & b)) / union


def segmentation_report(
    pred_probs: np.ndarray, gt: BinaryMask, threshold: float = 0.5
) -> EvalReport:
    """IoU of the thresholded prediction plus pixelwise AUC.

    The AUC field is absent (None) when the ground truth holds a single
    class.
    """
    probs = np.asarray(pred_probs, dtype=np.float64)
    if probs.shape != (gt.height, gt.width):
        raise ValueError(
            f"prediction shape {probs.shape} does not match mask "
            f"({gt.height}, {gt.width})"
        )
    pred_mask = BinaryMask.from_array((probs >= threshold).astype(np.uint8))
    iou_value = pixel_iou(pred_mask, gt)
    labels = gt.pixels.reshape(-1)
    auc_value = None
    if 0 < int(labels.sum()) < labels.size:
        batch = ScoredBatch.from_probabilities(labels, probs.reshape(-1))
        auc_value = roc_auc(batch)
    return EvalReport(
        accuracy=None,
        auc=auc_value,
        iou=iou_value,
        threshold=threshold,
        n=int(labels.size),
    )


class DetectionEval(NamedTuple):
    iou: float
    auc: float | None


def detection_top1_eval(
    anchor_scores: Sequence[float] | np.ndarray,
    pred_offsets: Sequence[OffsetVector] | np.ndarray,
    anchors: BoxSequence,
    gt: Box,
    assignment: TargetAssignment,
) -> DetectionEval:
    """Score one sample from its highest-confidence anchor.

    The argmax-score anchor (lowest index on ties) is decoded with its
    predicted offsets and compared to the ground truth by IoU; the AUC ranks
    all anchor scores against the assignment labels and is absent when the
    assignment has no positive anchor.
    """
    boxes = _as_box_list(anchors)
    scores = np.asarray(anchor_scores, dtype=np.float64)
    offsets = offsets_to_array(pred_offsets)
    if scores.shape[0] != len(boxes) or offsets.shape[0] != len(boxes):
        raise ValueError(
            f"scores ({scores.shape[0]}), offsets ({offsets.shape[0]}) and "
            f"anchors ({len(boxes)}) must have equal length"
        )
    if assignment.n_anchors != len(boxes):
        raise ValueError("assignment does not cover the anchor set")
    best = int(np.argmax(scores))
    decoded = decode_offsets(boxes[best], OffsetVector(*offsets[best]))
    iou_value = iou(decoded, gt)
    auc_value = None
    if 0 < assignment.n_positive < assignment.n_anchors:
        batch = ScoredBatch.from_logits(
            assignment.labels.astype(np.float64), scores
        )
        auc_value = roc_auc(batch)
    return DetectionEval(iou=iou_value, auc=auc_value)
