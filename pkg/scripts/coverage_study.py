"""Anchor adequacy study: coverage of the default anchor configuration over
random box populations of different size regimes.

Usage:
    python scripts/coverage_study.py --n 2000 --seed 123
"""
import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np

from anchorforge.geometry import (
    Box,
    DEFAULT_ANCHOR_CONFIG,
    coverage_report,
    generate_anchors,
)

REGIMES = {
    "tiny (0.02-0.08)": (0.02, 0.08),
    "small (0.05-0.15)": (0.05, 0.15),
    "anchor-sized (0.1-0.3)": (0.1, 0.3),
    "large (0.3-0.6)": (0.3, 0.6),
}


def sample_boxes(rng, n, lo, hi):
    boxes = []
    for _ in range(n):
        w = rng.uniform(lo, hi)
        h = rng.uniform(lo, hi)
        boxes.append(
            Box(rng.uniform(w / 2, 1 - w / 2), rng.uniform(h / 2, 1 - h / 2), w, h)
        )
    return boxes


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=2000, help="boxes per regime")
    parser.add_argument("--seed", type=int, default=123)
    parser.add_argument("--thresholds", default="0.3,0.5,0.75")
    args = parser.parse_args()

    thresholds = [float(t) for t in args.thresholds.split(",")]
    grid = generate_anchors(DEFAULT_ANCHOR_CONFIG)
    rng = np.random.default_rng(args.seed)

    header = "regime," + ",".join(f"coverage@{t:g}" for t in thresholds)
    print(header)
    for name, (lo, hi) in REGIMES.items():
        report = coverage_report(grid, sample_boxes(rng, args.n, lo, hi), thresholds)
        cells = ",".join(f"{report[t]:.6f}" for t in thresholds)
        print(f"{name},{cells}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
