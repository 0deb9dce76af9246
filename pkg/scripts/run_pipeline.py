"""End-to-end desk-scale run: synth -> anchors -> coverage -> targets ->
train -> eval, writing every artifact under one output directory.

Usage:
    python scripts/run_pipeline.py --out-dir out/pipeline --seed 7
"""
import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np

from anchorforge.cli import main as cli
from anchorforge.data import load_dataset
from anchorforge.trainer import load_model, predict_batch


def run(out_dir: Path, seed: int, n_samples: int) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    data_dir = out_dir / "data"
    steps = [
        ["synth", "--n", str(n_samples), "--size", "64", "--tumor-fraction", "0.5",
         "--seed", str(seed), "--out-dir", str(data_dir)],
        ["anchors-gen", "--out", str(out_dir / "anchors.csv")],
        ["coverage", "--anchors", str(out_dir / "anchors.csv"),
         "--manifest", str(data_dir / "manifest.jsonl"),
         "--out", str(out_dir / "coverage.csv")],
        ["targets-assign", "--manifest", str(data_dir / "manifest.jsonl"),
         "--anchors", str(out_dir / "anchors.csv"),
         "--out", str(out_dir / "targets.csv")],
        ["train-logreg", "--manifest", str(data_dir / "manifest.jsonl"),
         "--epochs", "20", "--lr", "0.1", "--batch", "16", "--seed", str(seed),
         "--model-out", str(out_dir / "model.txt")],
    ]
    for argv in steps:
        print(f"== anchorforge {' '.join(argv)}")
        code = cli(argv)
        if code != 0:
            return code

    records = load_dataset(data_dir / "manifest.jsonl")
    model = load_model(out_dir / "model.txt")
    probs = predict_batch(model, np.stack([r.features for r in records]))
    rows = ["score,label"]
    for record, prob in zip(records, probs):
        rows.append(f"{float(prob)!r},{1 if record.label == 'tumor' else 0}")
    scores_csv = out_dir / "scores.csv"
    scores_csv.write_text("\n".join(rows) + "\n")
    print("== anchorforge eval --task cls")
    return cli(["eval", "--task", "cls", "--scores", str(scores_csv),
                "--out", str(out_dir / "report.csv")])


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", type=Path, default=Path("out/pipeline"))
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--n", type=int, default=64)
    args = parser.parse_args()
    sys.exit(run(args.out_dir, args.seed, args.n))
