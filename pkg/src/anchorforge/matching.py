"""Anchor-to-ground-truth assignment and box offset regression targets.

Labels follow a two-stage policy: anchors whose best IoU exceeds ``pos_iou``
are positive and matched to their argmax ground truth; every ground truth
left without a positive anchor then claims its single best-IoU anchor,
provided that IoU exceeds ``fallback_iou``. Everything else is negative --
there is no ignore band.

Offsets use the center-normalized / log-size parameterization, which makes
decoded widths and heights positive by construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import Box, BoxSequence, _as_box_list, iou_matrix

__all__ = [
    "AssignmentPolicy",
    "OffsetVector",
    "TargetAssignment",
    "assign_targets",
    "encode_offsets",
    "decode_offsets",
    "encode_offsets_array",
    "decode_offsets_array",
    "offsets_to_array",
    "write_assignment_csv",
    "ASSIGNMENT_CSV_HEADER",
]

ASSIGNMENT_CSV_HEADER = "anchor_index,label,gt_index,dx,dy,dw,dh"


@dataclass(frozen=True)
class AssignmentPolicy:
    """IoU thresholds for positive labeling and the best-overlap fallback."""

    pos_iou: float = 0.5
    fallback_iou: float = 0.3

    def __post_init__(self) -> None:
        if not (0 < self.fallback_iou <= self.pos_iou < 1):
            raise ValueError(
                "assignment policy requires 0 < fallback_iou <= pos_iou < 1, "
                f"got fallback_iou={self.fallback_iou}, pos_iou={self.pos_iou}"
            )


@dataclass(frozen=True)
class OffsetVector:
    """Dimensionless regression target: center shift and log size change."""

    dx: float
    dy: float
    dw: float
    dh: float

    def __post_init__(self) -> None:
        for name in ("dx", "dy", "dw", "dh"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ValueError(f"offset field {name} must be finite, got {value!r}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.dx, self.dy, self.dw, self.dh)


@dataclass(frozen=True)
class TargetAssignment:
    """Per-anchor labels plus match and offset maps for the positives.

    ``labels`` is a boolean array (True = positive). ``matched_gt`` and
    ``offsets`` are keyed by positive anchor index and share exactly that
    key set.
    """

    labels: np.ndarray
    matched_gt: dict[int, int] = field(default_factory=dict)
    offsets: dict[int, OffsetVector] = field(default_factory=dict)

    def __post_init__(self) -> None:
        labels = np.asarray(self.labels, dtype=bool)
        object.__setattr__(self, "labels", labels)
        positives = set(int(i) for i in np.flatnonzero(labels))
        if set(self.matched_gt) != positives or set(self.offsets) != positives:
            raise ValueError(
                "matched_gt and offsets must be keyed by exactly the "
                "positive anchor indices"
            )

    @property
    def n_anchors(self) -> int:
        return int(self.labels.shape[0])

    @property
    def positive_indices(self) -> np.ndarray:
        return np.flatnonzero(self.labels)

    @property
    def n_positive(self) -> int:
        return int(np.count_nonzero(self.labels))


def encode_offsets(anchor: Box, gt: Box) -> OffsetVector:
    """Offsets that morph ``anchor`` into ``gt``.

    dx = (g.cx - a.cx)/a.w; dy = (g.cy - a.cy)/a.h;
    dw = ln(g.w/a.w);       dh = ln(g.h/a.h).
    """
    return OffsetVector(
        dx=(gt.cx - anchor.cx) / anchor.w,
        dy=(gt.cy - anchor.cy) / anchor.h,
        dw=math.log(gt.w / anchor.w),
        dh=math.log(gt.h / anchor.h),
    )


def decode_offsets(anchor: Box, off: OffsetVector) -> Box:
    """Inverse of :func:`encode_offsets`; raises on non-finite dimensions."""
    cx = anchor.cx + off.dx * anchor.w
    cy = anchor.cy + off.dy * anchor.h
    try:
        w = anchor.w * math.exp(off.dw)
        h = anchor.h * math.exp(off.dh)
    except OverflowError:
        raise ValueError(
            f"offset decoding overflowed: dw={off.dw}, dh={off.dh}"
        ) from None
    if not (math.isfinite(w) and math.isfinite(h)):
        raise ValueError(
            f"offset decoding produced non-finite box dimensions: w={w}, h={h}"
        )
    return Box(cx, cy, w, h)


def encode_offsets_array(anchors: np.ndarray, gts: np.ndarray) -> np.ndarray:
    """Vectorized :func:`encode_offsets` over matching (N, 4) arrays."""
    out = np.empty_like(anchors, dtype=np.float64)
    out[:, 0] = (gts[:, 0] - anchors[:, 0]) / anchors[:, 2]
    out[:, 1] = (gts[:, 1] - anchors[:, 1]) / anchors[:, 3]
    out[:, 2] = np.log(gts[:, 2] / anchors[:, 2])
    out[:, 3] = np.log(gts[:, 3] / anchors[:, 3])
    return out


def decode_offsets_array(anchors: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Vectorized :func:`decode_offsets` over matching (N, 4) arrays."""
    out = np.empty_like(anchors, dtype=np.float64)
    out[:, 0] = anchors[:, 0] + offsets[:, 0] * anchors[:, 2]
    out[:, 1] = anchors[:, 1] + offsets[:, 1] * anchors[:, 3]
    with np.errstate(over="raise"):
        try:
            out[:, 2] = anchors[:, 2] * np.exp(offsets[:, 2])
            out[:, 3] = anchors[:, 3] * np.exp(offsets[:, 3])
        except FloatingPointError:
            raise ValueError("offset decoding overflowed") from None
    if not np.all(np.isfinite(out)):
        raise ValueError("offset decoding produced non-finite box dimensions")
    return out


def offsets_to_array(offsets: Sequence[OffsetVector] | np.ndarray) -> np.ndarray:
    if isinstance(offsets, np.ndarray):
        array = np.asarray(offsets, dtype=np.float64)
        if array.ndim != 2 or array.shape[1] != 4:
            raise ValueError(f"offset array must have shape (n, 4), got {array.shape}")
        return array
    rows = [o.as_tuple() for o in offsets]
    if not rows:
        return np.zeros((0, 4), dtype=np.float64)
    return np.array(rows, dtype=np.float64)


def assign_targets(
    anchors: BoxSequence,
    gt: Sequence[Box],
    policy: AssignmentPolicy | None = None,
) -> TargetAssignment:
    """Label every anchor against ``gt`` and encode offsets for positives.

    Deterministic: argmax ties break toward the lowest anchor index, and
    fallback claims are processed in ground-truth index order (a later
    claim may re-match an anchor that is already positive). An empty ``gt``
    yields an all-negative assignment.
    """
    if policy is None:
        policy = AssignmentPolicy()
    boxes = _as_box_list(anchors)
    if not boxes:
        raise ValueError("assign_targets: anchor set is empty")
    gt = list(gt)
    labels = np.zeros(len(boxes), dtype=bool)
    matched: dict[int, int] = {}
    if gt:
        matrix = iou_matrix(boxes, gt)
        best_gt = matrix.argmax(axis=1)
        best_iou = matrix[np.arange(len(boxes)), best_gt]
        for a in np.flatnonzero(best_iou > policy.pos_iou):
            labels[a] = True
            matched[int(a)] = int(best_gt[a])
        covered = set(matched.values())
        for g in range(len(gt)):
            if g in covered:
                continue
            a_star = int(np.argmax(matrix[:, g]))
            if matrix[a_star, g] > policy.fallback_iou:
                labels[a_star] = True
                matched[a_star] = g
    offsets = {a: encode_offsets(boxes[a], gt[g]) for a, g in sorted(matched.items())}
    return TargetAssignment(
        labels=labels, matched_gt=dict(sorted(matched.items())), offsets=offsets
    )


def write_assignment_csv(assignment: TargetAssignment, path: str | Path) -> None:
    """Write ``anchor_index,label,gt_index,dx,dy,dw,dh`` rows.

    Ground-truth and offset fields are blank for negative anchors.
    """
    lines = [ASSIGNMENT_CSV_HEADER]
    for index in range(assignment.n_anchors):
        lines.append(format_assignment_row(assignment, index))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def format_assignment_row(assignment: TargetAssignment, index: int) -> str:
    if assignment.labels[index]:
        off = assignment.offsets[index]
        return (
            f"{index},positive,{assignment.matched_gt[index]},"
            f"{off.dx!r},{off.dy!r},{off.dw!r},{off.dh!r}"
        )
    return f"{index},negative,,,,,"
