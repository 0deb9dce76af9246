"""Axis-aligned box geometry: IoU, anchor grids, coverage statistics.

All coordinates are normalized fractions of the image side. Boxes are stored
in center-size form ``(cx, cy, w, h)``; corner form is derived on demand.
Anchor grids are laid out cell-major (row, then column), then by scale, then
by aspect ratio, and are never clipped to the unit square.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

__all__ = [
    "Box",
    "AnchorConfig",
    "AnchorGrid",
    "DEFAULT_ANCHOR_CONFIG",
    "iou",
    "iou_matrix",
    "generate_anchors",
    "coverage_report",
    "boxes_to_array",
    "boxes_from_array",
    "write_anchor_csv",
    "read_anchor_csv",
    "ANCHOR_CSV_HEADER",
]

ANCHOR_CSV_HEADER = "index,cx,cy,w,h"


@dataclass(frozen=True)
class Box:
    """Axis-aligned bounding box in normalized center-size form.

    ``w`` and ``h`` must be strictly positive; zero-area boxes are rejected
    at construction so IoU never divides by zero. Coordinates may lie
    outside [0, 1] (unclipped anchors rely on this).
    """

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self) -> None:
        for name in ("cx", "cy", "w", "h"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ValueError(f"box field {name} must be finite, got {value!r}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(
                f"box sides must be positive, got w={self.w}, h={self.h}"
            )

    @property
    def x1(self) -> float:
        return self.cx - self.w / 2

    @property
    def y1(self) -> float:
        return self.cy - self.h / 2

    @property
    def x2(self) -> float:
        return self.cx + self.w / 2

    @property
    def y2(self) -> float:
        return self.cy + self.h / 2

    @property
    def area(self) -> float:
        return self.w * self.h

    def corners(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> "Box":
        return cls((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)

    @classmethod
    def from_topleft(cls, x: float, y: float, w: float, h: float) -> "Box":
        """Build from normalized top-left form {x, y, w, h} (manifest layout)."""
        return cls(x + w / 2, y + h / 2, w, h)


BoxSequence = Union[Sequence[Box], "AnchorGrid"]


@dataclass(frozen=True)
class AnchorConfig:
    """Anchor layout: scales x aspect ratios replicated over a cell grid.

    A scale ``s`` is the side of the ratio-1 anchor as a fraction of the
    image side; other ratios preserve the area s^2 (w = s*sqrt(r),
    h = s/sqrt(r)). Total anchor count is
    ``grid_rows * grid_cols * len(scales) * len(ratios)``.
    """

    scales: tuple[float, ...]
    ratios: tuple[float, ...]
    grid_rows: int
    grid_cols: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        object.__setattr__(self, "ratios", tuple(float(r) for r in self.ratios))
        if not self.scales:
            raise ValueError("anchor scales must be nonempty")
        if not self.ratios:
            raise ValueError("anchor ratios must be nonempty")
        for s in self.scales:
            if not math.isfinite(s) or not 0 < s <= 1:
                raise ValueError(f"anchor scales must lie in (0, 1], got {s}")
        for r in self.ratios:
            if not math.isfinite(r) or r <= 0:
                raise ValueError(f"aspect ratios must be positive, got {r}")
        if self.grid_rows < 1 or self.grid_cols < 1:
            raise ValueError(
                f"grid dimensions must be positive, got "
                f"{self.grid_rows}x{self.grid_cols}"
            )

    @property
    def count(self) -> int:
        return self.grid_rows * self.grid_cols * len(self.scales) * len(self.ratios)


#: The configuration used throughout as the default: three scales, three
#: ratios, 32x32 cells -> 9216 anchors.
DEFAULT_ANCHOR_CONFIG = AnchorConfig(
    scales=(0.1, 0.175, 0.3), ratios=(2.0, 1.0, 0.5), grid_rows=32, grid_cols=32
)


@dataclass(frozen=True)
class AnchorGrid:
    """Ordered anchor boxes plus the config that generated them."""

    boxes: tuple[Box, ...]
    config: AnchorConfig

    def __post_init__(self) -> None:
        object.__setattr__(self, "boxes", tuple(self.boxes))
        if len(self.boxes) != self.config.count:
            raise ValueError(
                f"anchor grid has {len(self.boxes)} boxes but the config "
                f"implies {self.config.count}"
            )

    def __len__(self) -> int:
        return len(self.boxes)

    def __iter__(self):
        return iter(self.boxes)

    def __getitem__(self, index: int) -> Box:
        return self.boxes[index]

    @cached_property
    def array(self) -> np.ndarray:
        """(N, 4) float64 array of (cx, cy, w, h) rows."""
        return boxes_to_array(self.boxes)


def boxes_to_array(boxes: Iterable[Box]) -> np.ndarray:
    rows = [(b.cx, b.cy, b.w, b.h) for b in boxes]
    if not rows:
        return np.zeros((0, 4), dtype=np.float64)
    return np.array(rows, dtype=np.float64)


def boxes_from_array(array: np.ndarray) -> list[Box]:
    return [Box(float(cx), float(cy), float(w), float(h)) for cx, cy, w, h in array]


def _as_box_list(boxes: BoxSequence) -> list[Box]:
    if isinstance(boxes, AnchorGrid):
        return list(boxes.boxes)
    return list(boxes)


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes, in [0, 1].

    Symmetric; exactly 1.0 for identical boxes; 0.0 when the interiors are
    disjoint (touching edges count as disjoint).
    """
    ax1, ay1, ax2, ay2 = a.x1, a.y1, a.x2, a.y2
    bx1, by1, bx2, by2 = b.x1, b.y1, b.x2, b.y2
    ix = min(ax2, bx2) - max(ax1, bx1)
    iy = min(ay2, by2) - max(ay1, by1)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    # Areas come from the same corner differences as the intersection so
    # that identical boxes yield exactly 1.0.
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union


def iou_matrix(boxes_a: BoxSequence, boxes_b: BoxSequence) -> np.ndarray:
    """Pairwise IoU, shape ``(len(a), len(b))``.

    Entry (i, j) equals ``iou(a[i], b[j])`` bit-for-bit: the vectorized path
    performs the same float operations in the same order as the scalar one.
    Empty inputs yield zero-dimension matrices.
    """
    a = boxes_a.array if isinstance(boxes_a, AnchorGrid) else boxes_to_array(boxes_a)
    b = boxes_b.array if isinstance(boxes_b, AnchorGrid) else boxes_to_array(boxes_b)
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]), dtype=np.float64)
    ax1, ay1 = a[:, 0] - a[:, 2] / 2, a[:, 1] - a[:, 3] / 2
    ax2, ay2 = a[:, 0] + a[:, 2] / 2, a[:, 1] + a[:, 3] / 2
    bx1, by1 = b[:, 0] - b[:, 2] / 2, b[:, 1] - b[:, 3] / 2
    bx2, by2 = b[:, 0] + b[:, 2] / 2, b[:, 1] + b[:, 3] / 2
    ix = np.minimum(ax2[:, None], bx2[None, :]) - np.maximum(ax1[:, None], bx1[None, :])
    iy = np.minimum(ay2[:, None], by2[None, :]) - np.maximum(ay1[:, None], by1[None, :])
    inter = np.maximum(ix, 0.0) * np.maximum(iy, 0.0)
    area_a = (ax2 - ax1) * (ay2 - ay1)
    area_b = (bx2 - bx1) * (by2 - by1)
    union = area_a[:, None] + area_b[None, :] - inter
    return inter / union


def generate_anchors(cfg: AnchorConfig) -> AnchorGrid:
    """Generate the anchor grid for ``cfg``.

    Cell (i, j) centers its anchors at ``((j + 0.5)/cols, (i + 0.5)/rows)``;
    for scale ``s`` and ratio ``r`` the box is ``w = s*sqrt(r), h = s/sqrt(r)``.
    Ordering is row-major by cell, then by scale, then by ratio.
    """
    dims = []
    for s in cfg.scales:
        for r in cfg.ratios:
            root = math.sqrt(r)
            dims.append((s * root, s / root))
    boxes = []
    for i in range(cfg.grid_rows):
        cy = (i + 0.5) / cfg.grid_rows
        for j in range(cfg.grid_cols):
            cx = (j + 0.5) / cfg.grid_cols
            for w, h in dims:
                boxes.append(Box(cx, cy, w, h))
    return AnchorGrid(tuple(boxes), cfg)


def coverage_report(
    anchors: BoxSequence,
    gt: Sequence[Box],
    thresholds: Sequence[float] = (0.3, 0.5, 0.75),
) -> dict[float, float]:
    """Fraction of ground truths whose best anchor IoU exceeds each threshold.

    Returns ``{threshold: fraction}`` in the given threshold order. The
    comparison is strict (``best > t``), so fractions are nonincreasing in
    the threshold.
    """
    gt = list(gt)
    if not gt:
        raise ValueError("coverage_report: no ground truths")
    for t in thresholds:
        if not math.isfinite(t):
            raise ValueError(f"coverage threshold must be finite, got {t!r}")
    matrix = iou_matrix(anchors, gt)
    best = matrix.max(axis=0)
    return {
        float(t): float(np.count_nonzero(best > t) / len(gt)) for t in thresholds
    }


def write_anchor_csv(anchors: BoxSequence, path: str | Path) -> None:
    """Write anchors as ``index,cx,cy,w,h`` rows in grid order.

    Values use shortest round-trip decimal form so readers recover the
    exact floats.
    """
    boxes = _as_box_list(anchors)
    lines = [ANCHOR_CSV_HEADER]
    for index, box in enumerate(boxes):
        lines.append(f"{index},{box.cx!r},{box.cy!r},{box.w!r},{box.h!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_anchor_csv(path: str | Path) -> list[Box]:
    text = Path(path).read_text(encoding="ascii")
    lines = [line for line in text.splitlines() if line]
    if not lines or lines[0] != ANCHOR_CSV_HEADER:
        raise ValueError(f"{path}: expected anchor CSV header {ANCHOR_CSV_HEADER!r}")
    boxes = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 5:
            raise ValueError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
        try:
            boxes.append(Box(*(float(p) for p in parts[1:])))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    return boxes
