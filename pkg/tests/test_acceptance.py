"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the per-criterion
lines. Every tolerance and runtime budget is pinned here.
"""
import json
import time
from contextlib import contextmanager

import numpy as np
import pytest

from anchorforge.cli import main
from anchorforge.data import write_pgm
from anchorforge.geometry import DEFAULT_ANCHOR_CONFIG, generate_anchors
from anchorforge.losses import (
    ClassWeights,
    ScoredBatch,
    bce,
    focal_loss,
    gradient,
    mse,
    smooth_l1,
    weighted_bce,
)
from anchorforge.matching import decode_offsets, encode_offsets
from anchorforge.metrics import roc_auc
from anchorforge.trainer import TrainConfig, predict_batch, sgd_train
from anchorforge.data import DatasetSummary
from anchorforge.geometry import Box


@contextmanager
def criterion(number, title):
    started = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {number} FAIL {title}")
        raise
    elapsed = time.perf_counter() - started
    print(f"ACCEPTANCE {number} PASS {title} ({elapsed:.2f}s)")


def test_criterion_1_anchor_count():
    with criterion(1, "anchor count: default config yields exactly 9216 anchors in < 1 s"):
        started = time.perf_counter()
        grid = generate_anchors(DEFAULT_ANCHOR_CONFIG)
        elapsed = time.perf_counter() - started
        assert len(grid) == 9216
        assert elapsed < 1.0


def test_criterion_2_coverage_pipeline_matches_exhaustive_oracle(tmp_path, capsys):
    with criterion(
        2,
        "coverage: CLI output equals the exhaustive per-box max-IoU oracle "
        "exactly on a seeded 500-box set; coverage@0.3 >= 0.95; < 10 s",
    ):
        started = time.perf_counter()
        rng = np.random.default_rng(20260842)
        n_boxes = 500
        widths = rng.uniform(0.1, 0.3, n_boxes)
        heights = rng.uniform(0.1, 0.3, n_boxes)
        cxs = np.array([rng.uniform(w / 2, 1 - w / 2) for w in widths])
        cys = np.array([rng.uniform(h / 2, 1 - h / 2) for h in heights])

        write_pgm(tmp_path / "img.pgm", np.zeros((8, 8), dtype=np.uint8))
        lines = []
        for i in range(n_boxes):
            entry = {
                "id": f"b{i:04d}",
                "image": "img.pgm",
                "boxes": [
                    {
                        "x": cxs[i] - widths[i] / 2,
                        "y": cys[i] - heights[i] / 2,
                        "w": widths[i],
                        "h": heights[i],
                    }
                ],
                "split": "train",
            }
            lines.append(json.dumps(entry))
        manifest = tmp_path / "manifest.jsonl"
        manifest.write_text("\n".join(lines) + "\n")

        anchors_csv = tmp_path / "anchors.csv"
        assert main(["anchors-gen", "--out", str(anchors_csv)]) == 0
        capsys.readouterr()
        thresholds = (0.3, 0.5, 0.75)
        rc = main(
            [
                "coverage",
                "--anchors", str(anchors_csv),
                "--manifest", str(manifest),
                "--thresholds", "0.3,0.5,0.75",
            ]
        )
        assert rc == 0
        stdout = capsys.readouterr().out.splitlines()

        # Exhaustive oracle: parse the same anchor CSV by hand and take the
        # max IoU per ground truth with plain scalar loops, mirroring the
        # parser's corner convention (top-left -> center-size -> corners).
        anchor_corners = []
        for row in (tmp_path / "anchors.csv").read_text().splitlines()[1:]:
            _, cx, cy, w, h = (float(v) for v in row.split(","))
            anchor_corners.append((cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2))
        best = []
        for i in range(n_boxes):
            x, y = cxs[i] - widths[i] / 2, cys[i] - heights[i] / 2
            gcx, gcy = x + widths[i] / 2, y + heights[i] / 2
            gx1, gy1 = gcx - widths[i] / 2, gcy - heights[i] / 2
            gx2, gy2 = gcx + widths[i] / 2, gcy + heights[i] / 2
            garea = (gx2 - gx1) * (gy2 - gy1)
            top = 0.0
            for ax1, ay1, ax2, ay2 in anchor_corners:
                ix = (ax2 if ax2 < gx2 else gx2) - (ax1 if ax1 > gx1 else gx1)
                if ix <= 0.0:
                    continue
                iy = (ay2 if ay2 < gy2 else gy2) - (ay1 if ay1 > gy1 else gy1)
                if iy <= 0.0:
                    continue
                inter = ix * iy
                value = inter / ((ax2 - ax1) * (ay2 - ay1) + garea - inter)
                if value > top:
                    top = value
            best.append(top)

        assert stdout[0] == "threshold,coverage"
        for line, t in zip(stdout[1:], thresholds):
            covered = sum(1 for b in best if b > t)
            assert line == f"{t:.6f},{covered / n_boxes:.6f}"
        coverage_03 = sum(1 for b in best if b > 0.3) / n_boxes
        assert coverage_03 >= 0.95
        assert time.perf_counter() - started < 10.0


def _fd_gradient(fn, x, step=1e-5):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    for i in range(x.size):
        hi = x.copy()
        lo = x.copy()
        hi.flat[i] += step
        lo.flat[i] -= step
        out.flat[i] = (fn(hi) - fn(lo)) / (2 * step)
    return out


def _max_rel_err(analytic, numeric):
    analytic = np.asarray(analytic).reshape(-1)
    numeric = np.asarray(numeric).reshape(-1)
    # Floor at the oracle's own resolution: central differences at step
    # 1e-5 carry ~1e-11 truncation noise.
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return float((np.abs(analytic - numeric) / denom).max())


def test_criterion_3_gradient_checks():
    with criterion(
        3,
        "gradients: every loss matches central differences (step 1e-5, rel "
        "err < 1e-5) at 1000 seeded points each; < 5 s",
    ):
        started = time.perf_counter()
        rng = np.random.default_rng(31337)
        checks = {
            "bce": (bce, {}),
            "weighted_bce": (weighted_bce, {"weights": ClassWeights(0.9, 0.1)}),
            "focal": (focal_loss, {"alpha": 0.1, "gamma": 2.0}),
        }
        for kind, (fn, params) in checks.items():
            points = 0
            while points < 1000:
                n = int(rng.integers(1, 9))
                y = rng.integers(0, 2, n)
                z = rng.uniform(-4, 4, n)
                analytic = gradient(kind, ScoredBatch.from_logits(y, z), **params)
                numeric = _fd_gradient(
                    lambda v: fn(ScoredBatch.from_logits(y, v), **params).value, z
                )
                assert _max_rel_err(analytic, numeric) < 1e-5
                points += n
        for kind, fn in (("mse", mse), ("smooth_l1", smooth_l1)):
            points = 0
            while points < 1000:
                n = int(rng.integers(1, 5))
                target = rng.uniform(-1, 1, (n, 4))
                pred = target + rng.uniform(-2, 2, (n, 4))
                if kind == "smooth_l1":
                    d = np.abs(pred - target)
                    pred[np.abs(d - 1.0) < 1e-3] += 0.01  # skip the kink band
                analytic = gradient(kind, pred, target)
                numeric = _fd_gradient(
                    lambda v: fn(v.reshape(n, 4), target).value, pred.reshape(-1)
                ).reshape(n, 4)
                assert _max_rel_err(analytic, numeric) < 1e-5
                points += 4 * n
        assert time.perf_counter() - started < 5.0


def test_criterion_4_auc_oracle_equivalence():
    with criterion(
        4,
        "AUC: rank statistic equals the O(n^2) pairwise oracle exactly on "
        "200 seeded batches (ties included); < 2 s",
    ):
        started = time.perf_counter()
        rng = np.random.default_rng(8128)
        for _ in range(200):
            n = int(rng.integers(2, 65))
            labels = rng.integers(0, 2, n)
            labels[:2] = [0, 1]
            # Coarse score grid so ties occur in most batches.
            scores = rng.integers(0, 10, n) / 10.0
            got = roc_auc(ScoredBatch.from_probabilities(labels, scores))
            pos = scores[labels == 1]
            neg = scores[labels == 0]
            wins = 0.0
            for p in pos:
                for q in neg:
                    if p > q:
                        wins += 1.0
                    elif p == q:
                        wins += 0.5
            assert got == wins / (len(pos) * len(neg))
        assert time.perf_counter() - started < 2.0


def test_criterion_5_offset_roundtrip():
    with criterion(
        5,
        "offsets: decode(encode) identity within 1e-9 absolute over 1e5 "
        "seeded pairs; < 2 s",
    ):
        started = time.perf_counter()
        rng = np.random.default_rng(271828)
        values = rng.uniform(0.0, 1.0, (100_000, 8))
        worst = 0.0
        for row in values:
            anchor = Box(row[0], row[1], 0.01 + row[2], 0.01 + row[3])
            gt = Box(row[4], row[5], 0.01 + row[6], 0.01 + row[7])
            decoded = decode_offsets(anchor, encode_offsets(anchor, gt))
            worst = max(
                worst,
                abs(decoded.cx - gt.cx),
                abs(decoded.cy - gt.cy),
                abs(decoded.w - gt.w),
                abs(decoded.h - gt.h),
            )
        assert worst < 1e-9
        assert time.perf_counter() - started < 2.0


def test_criterion_6_baseline_recipe():
    with criterion(
        6,
        "baseline recipe: BCE + SGD, 20 epochs, batch 16 reaches >= 95% "
        "train accuracy on the seeded separable set (n=512); < 5 s",
    ):
        started = time.perf_counter()
        rng = np.random.default_rng(20260808)
        n = 512
        y = rng.integers(0, 2, n)
        x1 = np.where(y == 1, rng.uniform(0.3, 1.3, n), rng.uniform(-1.3, -0.3, n))
        x2 = rng.uniform(-1, 1, n)
        x = np.stack([x1, x2], axis=1)
        # Separability by construction: disjoint bands with margin >= 0.5.
        assert x[y == 1, 0].min() - x[y == 0, 0].max() >= 0.5
        cfg = TrainConfig(lr0=0.1, epochs=20, batch_size=16, seed=3)
        model, history = sgd_train(list(zip(x, y)), cfg)
        predictions = predict_batch(model, x) >= 0.5
        assert np.mean(predictions == (y == 1)) >= 0.95
        assert history[-1] < history[0]
        assert time.perf_counter() - started < 5.0


def test_criterion_7_distribution_summary():
    with criterion(
        7,
        "distribution summary: published class counts reproduce their "
        "percentages within 0.01",
    ):
        summary = DatasetSummary(
            counts={
                "train": {
                    "notumor": 1595,
                    "meningioma": 1339,
                    "glioma": 1321,
                    "pituitary": 1457,
                },
                "test": {
                    "notumor": 405,
                    "meningioma": 306,
                    "glioma": 300,
                    "pituitary": 300,
                },
            }
        )
        expected = {
            ("train", "notumor"): 27.92,
            ("train", "meningioma"): 23.44,
            ("train", "glioma"): 23.13,
            ("train", "pituitary"): 25.51,
            ("test", "notumor"): 30.89,
            ("test", "meningioma"): 23.34,
            ("test", "glioma"): 22.88,
            ("test", "pituitary"): 22.88,
        }
        for (split, label), percent in expected.items():
            assert summary.percent(split, label) == pytest.approx(percent, abs=0.01)


def _run_pipeline(root, monkeypatch, threads):
    """synth -> anchors -> targets -> train -> eval, returning artifact bytes."""
    if threads is None:
        monkeypatch.delenv("ANCHORFORGE_THREADS", raising=False)
    else:
        monkeypatch.setenv("ANCHORFORGE_THREADS", str(threads))
    root.mkdir()
    data_dir = root / "data"
    assert main(
        ["synth", "--n", "16", "--size", "64", "--tumor-fraction", "0.5",
         "--seed", "99", "--out-dir", str(data_dir)]
    ) == 0
    manifest = data_dir / "manifest.jsonl"
    anchors_csv = root / "anchors.csv"
    assert main(["anchors-gen", "--out", str(anchors_csv)]) == 0
    targets_csv = root / "targets.csv"
    assert main(
        ["targets-assign", "--manifest", str(manifest),
         "--anchors", str(anchors_csv), "--out", str(targets_csv)]
    ) == 0
    model_txt = root / "model.txt"
    assert main(
        ["train-logreg", "--manifest", str(manifest), "--epochs", "3",
         "--lr", "0.1", "--batch", "16", "--seed", "5",
         "--model-out", str(model_txt)]
    ) == 0
    # Deterministic eval artifact: score the training set with the trained
    # model and report accuracy/AUC through the CLI.
    from anchorforge.data import load_dataset
    from anchorforge.trainer import load_model

    records = load_dataset(manifest)
    model = load_model(model_txt)
    features = np.stack([r.features for r in records])
    probs = predict_batch(model, features)
    scores_csv = root / "scores.csv"
    rows = ["score,label"]
    for record, prob in zip(records, probs):
        rows.append(f"{float(prob)!r},{1 if record.label == 'tumor' else 0}")
    scores_csv.write_text("\n".join(rows) + "\n")
    report_csv = root / "report.csv"
    assert main(
        ["eval", "--task", "cls", "--scores", str(scores_csv), "--out", str(report_csv)]
    ) == 0
    artifacts = {}
    for path in sorted(root.rglob("*")):
        if path.is_file():
            artifacts[str(path.relative_to(root))] = path.read_bytes()
    return artifacts


def test_criterion_8_end_to_end_determinism(tmp_path, monkeypatch, capsys):
    with criterion(
        8,
        "determinism: the synth->anchors->targets->train->eval pipeline is "
        "byte-identical across reruns and worker pools {1, 4}",
    ):
        runs = {
            "baseline": _run_pipeline(tmp_path / "run1", monkeypatch, None),
            "repeat": _run_pipeline(tmp_path / "run2", monkeypatch, None),
            "one_worker": _run_pipeline(tmp_path / "run3", monkeypatch, 1),
            "four_workers": _run_pipeline(tmp_path / "run4", monkeypatch, 4),
        }
        capsys.readouterr()
        baseline = runs["baseline"]
        assert set(baseline) == {
            "anchors.csv", "targets.csv", "model.txt", "scores.csv", "report.csv",
            "data/manifest.jsonl",
        } | {f"data/images/synth-{i:05d}.pgm" for i in range(16)} | {
            f"data/masks/synth-{i:05d}.pgm" for i in range(16)
        }
        for name, artifacts in runs.items():
            assert set(artifacts) == set(baseline), name
            for rel, blob in baseline.items():
                assert artifacts[rel] == blob, (name, rel)


def test_criterion_9_reference_scores_are_not_targets(tmp_path, capsys):
    with criterion(
        9,
        "externally reported model scores are non-reproducible references; "
        "the metric paths behind them pass their fixture evaluations",
    ):
        # Detection fixture: score peak on an anchor that equals the ground
        # truth, zero offsets -> IoU exactly 1.
        anchors_csv = tmp_path / "anchors.csv"
        assert main(
            ["anchors-gen", "--scales", "0.2", "--ratios", "1", "--grid", "4x4",
             "--out", str(anchors_csv)]
        ) == 0
        capsys.readouterr()
        scores_csv = tmp_path / "scores.csv"
        lines = ["score"] + ["0.0"] * 16
        lines[6] = "0.9"
        scores_csv.write_text("\n".join(lines) + "\n")
        gt = "0.375,0.375,0.2,0.2"  # cell (1, 1) of the 4x4 grid
        assert main(
            ["eval", "--task", "det", "--anchors", str(anchors_csv),
             "--scores", str(scores_csv), "--gt", gt]
        ) == 0
        det_report = json.loads(capsys.readouterr().out)
        assert det_report["iou"] == 1.0

        # Segmentation fixture: prediction equal to ground truth -> IoU and
        # AUC exactly 1.
        mask = (np.arange(64).reshape(8, 8) % 3 == 0).astype(np.uint8) * 255
        write_pgm(tmp_path / "gt.pgm", mask)
        write_pgm(tmp_path / "pred.pgm", mask)
        assert main(
            ["eval", "--task", "seg", "--pred", str(tmp_path / "pred.pgm"),
             "--gt", str(tmp_path / "gt.pgm")]
        ) == 0
        seg_report = json.loads(capsys.readouterr().out)
        assert seg_report["iou"] == 1.0 and seg_report["auc"] == 1.0
