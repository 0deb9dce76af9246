"""Dataset ingestion, summaries, resizing, and a seeded synthetic generator.

Manifests are line-delimited JSON, one record per line, with fields
``{id, image, mask?, boxes?, label?, split}``. Image and mask paths are
resolved relative to the manifest. Boxes are stored in normalized top-left
form ``{x, y, w, h}`` and converted to center-size on load. Masks are
binarized on load (0 stays background, any nonzero pixel becomes 1).

Rasters are 8-bit grayscale, either PGM (P5, maxval 255, written bit-exact
by this module) or PNG. All randomness flows through numpy's PCG64
generator (``numpy.random.default_rng``): a fixed 64-bit seed yields the
same stream on every platform, and each synthetic record derives its own
generator from (seed, record index) so generation is order- and
worker-count-independent.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .geometry import Box
from .metrics import BinaryMask
from .pool import parallel_map

__all__ = [
    "ImageRecord",
    "DatasetSummary",
    "SynthConfig",
    "load_dataset",
    "summarize",
    "generate_synthetic",
    "resize",
    "write_dataset",
    "read_pgm",
    "write_pgm",
    "load_image",
    "save_image",
    "SUMMARY_CSV_HEADER",
]

SUMMARY_CSV_HEADER = "split,class,count,percent"
SPLITS = ("train", "test")
UNLABELED = "unlabeled"


@dataclass(frozen=True)
class ImageRecord:
    """One sample: grayscale raster plus optional mask, boxes, and label."""

    id: str
    width: int
    height: int
    pixels: np.ndarray
    mask: BinaryMask | None = None
    boxes: tuple[Box, ...] | None = None
    label: str | None = None
    split: str = "train"

    def __post_init__(self) -> None:
        pixels = np.asarray(self.pixels, dtype=np.uint8)
        if pixels.shape != (self.height, self.width):
            raise ValueError(
                f"record {self.id}: pixel raster has shape {pixels.shape}, "
                f"expected ({self.height}, {self.width})"
            )
        object.__setattr__(self, "pixels", pixels)
        if self.mask is not None and (
            self.mask.width != self.width or self.mask.height != self.height
        ):
            raise ValueError(
                f"record {self.id}: mask is {self.mask.width}x{self.mask.height} "
                f"but image is {self.width}x{self.height}"
            )
        if self.boxes is not None:
            object.__setattr__(self, "boxes", tuple(self.boxes))
        if self.split not in SPLITS:
            raise ValueError(
                f"record {self.id}: split must be one of {SPLITS}, got {self.split!r}"
            )

    @property
    def features(self) -> np.ndarray:
        """Flattened pixels scaled to [0, 1] (classifier input)."""
        return self.pixels.reshape(-1).astype(np.float64) / 255.0


# --- raster io ------------------------------------------------------------


def write_pgm(path: str | Path, pixels: np.ndarray) -> None:
    """Write an 8-bit grayscale raster as binary PGM (P5, maxval 255)."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim != 2:
        raise ValueError("PGM rasters must be 2-D")
    height, width = pixels.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pixels.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        try:
            fields.append(int(data[start:pos]))
        except ValueError:
            raise ValueError(f"{path}: malformed PGM header") from None
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = fields
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported, got {maxval}")
    raster = data[pos : pos + width * height]
    if len(raster) != width * height:
        raise ValueError(f"{path}: truncated PGM raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width).copy()


def load_image(path: str | Path) -> np.ndarray:
    """Load an 8-bit grayscale raster from PGM or PNG."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return read_pgm(path)
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.uint8)


def save_image(path: str | Path, pixels: np.ndarray) -> None:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        write_pgm(path, pixels)
    else:
        Image.fromarray(np.asarray(pixels, dtype=np.uint8), mode="L").save(path)


# --- manifests ------------------------------------------------------------


def _record_from_manifest_line(
    obj: dict, base: Path, manifest: Path, lineno: int
) -> ImageRecord:
    for key in ("id", "image", "split"):
        if key not in obj:
            raise ValueError(f"{manifest}:{lineno}: missing required field {key!r}")
    record_id = str(obj["id"])
    image_path = base / obj["image"]
    if not image_path.exists():
        raise ValueError(
            f"{manifest}:{lineno}: image file not found for record "
            f"{record_id}: {image_path}"
        )
    pixels = load_image(image_path)
    mask = None
    if obj.get("mask") is not None:
        mask_path = base / obj["mask"]
        if not mask_path.exists():
            raise ValueError(
                f"{manifest}:{lineno}: mask file not found for record "
                f"{record_id}: {mask_path}"
            )
        raw = load_image(mask_path)
        if raw.shape != pixels.shape:
            raise ValueError(
                f"{manifest}:{lineno}: record {record_id}: mask dimensions "
                f"{raw.shape[1]}x{raw.shape[0]} do not match image "
                f"{pixels.shape[1]}x{pixels.shape[0]}"
            )
        mask = BinaryMask.from_array((raw != 0).astype(np.uint8))
    boxes = None
    if obj.get("boxes") is not None:
        try:
            boxes = tuple(
                Box.from_topleft(float(b["x"]), float(b["y"]), float(b["w"]), float(b["h"]))
                for b in obj["boxes"]
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(
                f"{manifest}:{lineno}: record {record_id}: bad box entry ({exc})"
            ) from None
    label = None if obj.get("label") is None else str(obj["label"])
    try:
        return ImageRecord(
            id=record_id,
            width=pixels.shape[1],
            height=pixels.shape[0],
            pixels=pixels,
            mask=mask,
            boxes=boxes,
            label=label,
            split=str(obj["split"]),
        )
    except ValueError as exc:
        raise ValueError(f"{manifest}:{lineno}: {exc}") from None


def load_dataset(manifest_path: str | Path) -> list[ImageRecord]:
    """Load all records from a JSONL manifest, sorted by record id.

    Malformed lines and missing or mismatched files raise ValueError with
    the manifest line number (and record id where known).
    """
    manifest = Path(manifest_path)
    if not manifest.exists():
        raise ValueError(f"manifest not found: {manifest}")
    base = manifest.parent
    numbered = [
        (lineno, line)
        for lineno, line in enumerate(
            manifest.read_text(encoding="utf-8").splitlines(), start=1
        )
        if line.strip()
    ]
    parsed = []
    for lineno, line in numbered:
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{manifest}:{lineno}: malformed JSON ({exc})") from None
        if not isinstance(obj, dict):
            raise ValueError(f"{manifest}:{lineno}: manifest line must be an object")
        parsed.append((lineno, obj))
    records = parallel_map(
        lambda item: _record_from_manifest_line(item[1], base, manifest, item[0]),
        parsed,
    )
    return sorted(records, key=lambda r: r.id)


def write_dataset(records: Sequence[ImageRecord], out_dir: str | Path) -> Path:
    """Write images, masks, and a JSONL manifest under ``out_dir``.

    Rasters go to ``images/<id>.pgm`` and ``masks/<id>.pgm``; the manifest
    is ``manifest.jsonl`` with deterministic bytes for identical records.
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    if any(r.mask is not None for r in records):
        (out / "masks").mkdir(exist_ok=True)
    lines = []
    for record in records:
        image_rel = f"images/{record.id}.pgm"
        write_pgm(out / image_rel, record.pixels)
        entry: dict = {"id": record.id, "image": image_rel}
        if record.mask is not None:
            mask_rel = f"masks/{record.id}.pgm"
            write_pgm(out / mask_rel, record.mask.pixels)
            entry["mask"] = mask_rel
        if record.boxes is not None:
            entry["boxes"] = [
                {"x": b.x1, "y": b.y1, "w": b.w, "h": b.h} for b in record.boxes
            ]
        if record.label is not None:
            entry["label"] = record.label
        entry["split"] = record.split
        lines.append(json.dumps(entry, separators=(",", ":")))
    manifest = out / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


# --- summaries ------------------------------------------------------------


@dataclass(frozen=True)
class DatasetSummary:
    """Per-split, per-class counts with derived percentages."""

    counts: dict[str, dict[str, int]]

    def split_total(self, split: str) -> int:
        return sum(self.counts[split].values())

    def percent(self, split: str, label: str) -> float:
        return 100.0 * self.counts[split][label] / self.split_total(split)

    def rows(self) -> list[tuple[str, str, int, float]]:
        ordered_splits = [s for s in SPLITS if s in self.counts]
        ordered_splits += sorted(set(self.counts) - set(SPLITS))
        out = []
        for split in ordered_splits:
            for label in sorted(self.counts[split]):
                out.append(
                    (split, label, self.counts[split][label], self.percent(split, label))
                )
        return out

    def to_csv(self) -> str:
        lines = [SUMMARY_CSV_HEADER]
        for split, label, count, percent in self.rows():
            lines.append(f"{split},{label},{count},{percent:.6f}")
        return "\n".join(lines) + "\n"


def summarize(records: Sequence[ImageRecord]) -> DatasetSummary:
    if not records:
        raise ValueError("summarize: empty record set")
    counts: dict[str, dict[str, int]] = {}
    for record in records:
        label = record.label if record.label is not None else UNLABELED
        per_split = counts.setdefault(record.split, {})
        per_split[label] = per_split.get(label, 0) + 1
    return DatasetSummary(counts=counts)


# --- synthetic generator ----------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    """Seeded generator settings for MRI-like desk-scale samples."""

    n_samples: int
    image_size: int = 64
    tumor_fraction: float = 0.5
    radius_range: tuple[float, float] = (0.1, 0.25)
    noise_amplitude: int = 30
    seed: int = 0

    #: Smallest tumor radius in pixels; coarser rasters cannot honor the
    #: ellipse-fills-its-box contract.
    MIN_RADIUS_PIXELS = 6.0

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise ValueError(f"n_samples must be positive, got {self.n_samples}")
        if self.image_size < 1:
            raise ValueError(f"image_size must be positive, got {self.image_size}")
        if not 0.0 <= self.tumor_fraction <= 1.0:
            raise ValueError(
                f"tumor_fraction must lie in [0, 1], got {self.tumor_fraction}"
            )
        rmin, rmax = self.radius_range
        if not 0 < rmin <= rmax < 0.5:
            raise ValueError(
                f"radius_range must satisfy 0 < min <= max < 0.5, got {self.radius_range}"
            )
        if rmin * self.image_size < self.MIN_RADIUS_PIXELS:
            raise ValueError(
                f"radius_range minimum {rmin} spans fewer than "
                f"{self.MIN_RADIUS_PIXELS} pixels at image_size {self.image_size}"
            )
        if not 0 <= self.noise_amplitude <= 255:
            raise ValueError(
                f"noise_amplitude must be an 8-bit value, got {self.noise_amplitude}"
            )


def _box_from_mask(mask: np.ndarray, size: int) -> Box:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    x1, x2 = cols[0] / size, (cols[-1] + 1) / size
    y1, y2 = rows[0] / size, (rows[-1] + 1) / size
    return Box.from_topleft(x1, y1, x2 - x1, y2 - y1)


def _synth_record(cfg: SynthConfig, index: int, is_tumor: bool) -> ImageRecord:
    rng = np.random.default_rng([cfg.seed, index])
    size = cfg.image_size
    pixels = rng.integers(
        0, cfg.noise_amplitude + 1, size=(size, size), dtype=np.uint8
    )
    record_id = f"synth-{index:05d}"
    if not is_tumor:
        mask = BinaryMask.from_array(np.zeros((size, size), dtype=np.uint8))
        return ImageRecord(
            id=record_id,
            width=size,
            height=size,
            pixels=pixels,
            mask=mask,
            boxes=None,
            label="notumor",
            split="train",
        )
    rmin, rmax = cfg.radius_range
    rx = rng.uniform(rmin, rmax)
    ry = rng.uniform(rmin, rmax)
    cx = rng.uniform(rx, 1.0 - rx)
    cy = rng.uniform(ry, 1.0 - ry)
    # Conservative rasterization: a pixel is lit when any part of its unit
    # square lies inside the ellipse (clamp the center distance by half a
    # pixel per axis). Keeps the extreme rows/columns of the raster
    # populated, so the mask fills most of its own tight bounding box.
    half = 0.5 / size
    ys, xs = np.mgrid[0:size, 0:size]
    u = np.maximum(np.abs((xs + 0.5) / size - cx) - half, 0.0)
    v = np.maximum(np.abs((ys + 0.5) / size - cy) - half, 0.0)
    inside = (u * u) / (rx * rx) + (v * v) / (ry * ry) <= 1.0
    pixels = np.where(inside, np.uint8(255), pixels)
    mask_arr = inside.astype(np.uint8)
    return ImageRecord(
        id=record_id,
        width=size,
        height=size,
        pixels=pixels,
        mask=BinaryMask.from_array(mask_arr),
        boxes=(_box_from_mask(mask_arr, size),),
        label="tumor",
        split="train",
    )


def generate_synthetic(cfg: SynthConfig) -> list[ImageRecord]:
    """Generate seeded MRI-like records: dark noise, bright tumor ellipses.

    Exactly ``round(n_samples * tumor_fraction)`` records carry a tumor
    (bright filled ellipse, its raster as the mask, its tight bounding box
    as the ground truth). Identical configs produce byte-identical records
    regardless of worker count.
    """
    flags = np.zeros(cfg.n_samples, dtype=bool)
    n_tumor = round(cfg.n_samples * cfg.tumor_fraction)
    order = np.random.default_rng(cfg.seed).permutation(cfg.n_samples)
    flags[order[:n_tumor]] = True
    return parallel_map(
        lambda i: _synth_record(cfg, i, bool(flags[i])), range(cfg.n_samples)
    )


# --- resizing ---------------------------------------------------------------


def _resize_nearest(pixels: np.ndarray, size: int) -> np.ndarray:
    in_h, in_w = pixels.shape
    rows = np.minimum((np.arange(size) + 0.5) * in_h / size, in_h - 1).astype(np.int64)
    cols = np.minimum((np.arange(size) + 0.5) * in_w / size, in_w - 1).astype(np.int64)
    return pixels[rows][:, cols]


def _axis_weights(in_size: int, out_size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    src = (np.arange(out_size) + 0.5) * in_size / out_size - 0.5
    src = np.clip(src, 0.0, in_size - 1.0)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = src - lo
    return lo, hi, frac


def _resize_bilinear(pixels: np.ndarray, size: int) -> np.ndarray:
    data = pixels.astype(np.float64)
    y_lo, y_hi, fy = _axis_weights(pixels.shape[0], size)
    x_lo, x_hi, fx = _axis_weights(pixels.shape[1], size)
    fy = fy[:, None]
    fx = fx[None, :]
    top = data[y_lo][:, x_lo] * (1 - fx) + data[y_lo][:, x_hi] * fx
    bottom = data[y_hi][:, x_lo] * (1 - fx) + data[y_hi][:, x_hi] * fx
    blended = top * (1 - fy) + bottom * fy
    return np.clip(np.rint(blended), 0, 255).astype(np.uint8)


def resize(record: ImageRecord, size: int) -> ImageRecord:
    """Resample to size x size: bilinear image, nearest-neighbor mask.

    Normalized boxes are resolution-free and pass through unchanged. A
    no-op resize returns the record as is.
    """
    if size < 1:
        raise ValueError(f"target size must be positive, got {size}")
    if record.width == record.height == size:
        return record
    mask = record.mask
    if mask is not None:
        mask = BinaryMask.from_array(_resize_nearest(mask.pixels, size))
    return ImageRecord(
        id=record.id,
        width=size,
        height=size,
        pixels=_resize_bilinear(record.pixels, size),
        mask=mask,
        boxes=record.boxes,
        label=record.label,
        split=record.split,
    )
