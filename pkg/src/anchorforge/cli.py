"""Command-line front end: synth -> anchors -> targets -> training -> reports.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure
(degenerate-label AUC). Failures print a diagnostic to stderr and write no
report files. All randomness flows from explicit ``--seed`` flags; report
values use fixed 6-decimal '.' formatting. ``ANCHORFORGE_THREADS`` caps the
worker pool without changing any output byte.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import data, geometry, losses, matching, metrics, trainer
from .pool import parallel_map

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

MULTI_ASSIGNMENT_CSV_HEADER = "record_id," + matching.ASSIGNMENT_CSV_HEADER
COVERAGE_CSV_HEADER = "threshold,coverage"

NEGATIVE_LABELS = {"notumor", "no-tumor", "no_tumor", "negative", "0"}


class UsageError(Exception):
    """Bad flag values; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_float_list(raw: str, flag: str) -> list[float]:
    items = [part for part in raw.split(",") if part.strip()]
    if not items:
        raise UsageError(f"{flag}: expected a comma-separated list of numbers")
    try:
        return [float(part) for part in items]
    except ValueError:
        raise UsageError(f"{flag}: malformed number in {raw!r}") from None


def _parse_grid(raw: str) -> tuple[int, int]:
    parts = raw.lower().split("x")
    if len(parts) != 2:
        raise UsageError(f"--grid: expected RxC (e.g. 32x32), got {raw!r}")
    try:
        rows, cols = int(parts[0]), int(parts[1])
    except ValueError:
        raise UsageError(f"--grid: expected RxC (e.g. 32x32), got {raw!r}") from None
    return rows, cols


def _parse_box(raw: str, flag: str) -> geometry.Box:
    values = _parse_float_list(raw, flag)
    if len(values) != 4:
        raise UsageError(f"{flag}: expected cx,cy,w,h")
    try:
        return geometry.Box(*values)
    except ValueError as exc:
        raise UsageError(f"{flag}: {exc}") from None


def _read_scored_csv(path: Path) -> tuple[np.ndarray, np.ndarray]:
    """Read a ``score,label`` CSV into (scores, labels)."""
    lines = _read_csv_lines(path, "score,label")
    scores, labels = [], []
    for lineno, line in lines:
        parts = line.split(",")
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected score,label")
        scores.append(float(parts[0]))
        labels.append(int(parts[1]))
    return np.asarray(scores), np.asarray(labels)


def _read_csv_lines(path: Path, header: str) -> list[tuple[int, str]]:
    if not path.exists():
        raise ValueError(f"file not found: {path}")
    raw = path.read_text(encoding="utf-8").splitlines()
    if not raw or raw[0] != header:
        raise ValueError(f"{path}: expected header {header!r}")
    return [(i, line) for i, line in enumerate(raw[1:], start=2) if line.strip()]


def _read_column_csv(path: Path, header: str, columns: int) -> np.ndarray:
    rows = []
    for lineno, line in _read_csv_lines(path, header):
        parts = line.split(",")
        if len(parts) != columns:
            raise ValueError(
                f"{path}:{lineno}: expected {columns} fields, got {len(parts)}"
            )
        rows.append([float(p) for p in parts])
    return np.asarray(rows, dtype=np.float64).reshape(-1, columns)


def _binary_label(record: data.ImageRecord) -> int:
    return 0 if record.label.lower() in NEGATIVE_LABELS else 1


def _require(args, names: list[str], context: str) -> None:
    missing = [f"--{name.replace('_', '-')}" for name in names if getattr(args, name) is None]
    if missing:
        raise UsageError(f"{context} requires {', '.join(missing)}")


# --- commands ---------------------------------------------------------------


def cmd_anchors_gen(args) -> int:
    scales = _parse_float_list(args.scales, "--scales")
    ratios = _parse_float_list(args.ratios, "--ratios")
    rows, cols = _parse_grid(args.grid)
    try:
        cfg = geometry.AnchorConfig(
            scales=tuple(scales), ratios=tuple(ratios), grid_rows=rows, grid_cols=cols
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    grid = geometry.generate_anchors(cfg)
    geometry.write_anchor_csv(grid, args.out)
    print(f"anchors {len(grid)} {args.out}")
    return EXIT_OK


def _pooled_gt_boxes(records) -> list[geometry.Box]:
    return [box for record in records for box in (record.boxes or ())]


def cmd_coverage(args) -> int:
    thresholds = _parse_float_list(args.thresholds, "--thresholds")
    anchors = geometry.read_anchor_csv(args.anchors)
    records = data.load_dataset(args.manifest)
    if args.drop_unmasked:
        records = [r for r in records if r.mask is not None and r.mask.count > 0]
    gt = _pooled_gt_boxes(records)
    if not gt:
        raise ValueError(f"{args.manifest}: manifest has no boxes")
    report = geometry.coverage_report(anchors, gt, thresholds)
    lines = [COVERAGE_CSV_HEADER]
    lines += [f"{t:.6f},{frac:.6f}" for t, frac in report.items()]
    print("\n".join(lines))
    if args.out:
        Path(args.out).write_text("\n".join(lines) + "\n", encoding="ascii")
    return EXIT_OK


def cmd_targets_assign(args) -> int:
    try:
        policy = matching.AssignmentPolicy(
            pos_iou=args.pos_iou, fallback_iou=args.fallback_iou
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    anchors = geometry.read_anchor_csv(args.anchors)
    records = data.load_dataset(args.manifest)
    if args.drop_unmasked:
        records = [r for r in records if r.mask is not None and r.mask.count > 0]
    if not records:
        raise ValueError(f"{args.manifest}: no records to assign")
    assignments = parallel_map(
        lambda record: matching.assign_targets(anchors, record.boxes or (), policy),
        records,
    )
    lines = [MULTI_ASSIGNMENT_CSV_HEADER]
    for record, assignment in zip(records, assignments):
        for index in range(assignment.n_anchors):
            lines.append(
                f"{record.id},{matching.format_assignment_row(assignment, index)}"
            )
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="ascii")
    with_positive = sum(1 for a in assignments if a.n_positive > 0)
    print(f"fraction_with_positive {with_positive / len(records):.6f}")
    return EXIT_OK


def cmd_train_logreg(args) -> int:
    records = data.load_dataset(args.manifest)
    if args.drop_unmasked:
        records = [r for r in records if r.mask is not None and r.mask.count > 0]
    labeled = [r for r in records if r.label is not None]
    if not labeled:
        raise ValueError(f"{args.manifest}: no labeled records to train on")
    train = [r for r in labeled if r.split == "train"]
    test = [r for r in labeled if r.split == "test"]
    if not train:
        raise ValueError(f"{args.manifest}: no train-split records")
    try:
        cfg = trainer.TrainConfig(
            lr0=args.lr, epochs=args.epochs, batch_size=args.batch, seed=args.seed
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    pairs = [(r.features, _binary_label(r)) for r in train]
    model, history = trainer.sgd_train(pairs, cfg)
    for epoch, loss in enumerate(history):
        print(f"epoch {epoch} lr {trainer.lr_at(epoch, cfg):.6f} loss {loss:.6f}")
    for name, subset in (("train", train), ("test", test)):
        if not subset:
            continue
        features = np.stack([r.features for r in subset])
        labels = np.asarray([_binary_label(r) for r in subset], dtype=np.float64)
        probs = trainer.predict_batch(model, features)
        batch = losses.ScoredBatch.from_probabilities(labels, probs)
        print(f"{name}_accuracy {metrics.accuracy(batch):.6f}")
        if 0 < batch.n_pos < batch.n:
            print(f"{name}_auc {metrics.roc_auc(batch):.6f}")
    trainer.save_model(model, args.model_out)
    return EXIT_OK


def _emit_report(report: metrics.EvalReport, out: str | None) -> None:
    print(report.to_json_line())
    if out:
        Path(out).write_text(
            metrics.EVAL_CSV_HEADER + "\n" + report.to_csv_row() + "\n",
            encoding="ascii",
        )


def _eval_cls(args) -> metrics.EvalReport:
    _require(args, ["scores"], "--task cls")
    scores, labels = _read_scored_csv(Path(args.scores))
    batch = losses.ScoredBatch.from_probabilities(labels, scores)
    return metrics.EvalReport(
        accuracy=metrics.accuracy(batch, args.threshold),
        auc=metrics.roc_auc(batch),
        iou=None,
        threshold=args.threshold,
        n=batch.n,
    )


def _eval_seg(args) -> metrics.EvalReport:
    _require(args, ["pred", "gt"], "--task seg")
    pred = data.load_image(args.pred).astype(np.float64) / 255.0
    gt_raw = data.load_image(args.gt)
    if gt_raw.shape != pred.shape:
        raise ValueError(
            f"prediction {pred.shape} and ground truth {gt_raw.shape} differ"
        )
    gt = metrics.BinaryMask.from_array((gt_raw != 0).astype(np.uint8))
    return metrics.segmentation_report(pred, gt, args.threshold)


def _eval_det(args) -> metrics.EvalReport:
    _require(args, ["anchors", "scores", "gt"], "--task det")
    gt = _parse_box(args.gt, "--gt")
    anchors = geometry.read_anchor_csv(args.anchors)
    scores = _read_column_csv(Path(args.scores), "score", 1).reshape(-1)
    if args.offsets:
        offsets = _read_column_csv(Path(args.offsets), "dx,dy,dw,dh", 4)
    else:
        offsets = np.zeros((len(anchors), 4), dtype=np.float64)
    assignment = matching.assign_targets(anchors, [gt])
    result = metrics.detection_top1_eval(scores, offsets, anchors, gt, assignment)
    return metrics.EvalReport(
        accuracy=None,
        auc=result.auc,
        iou=result.iou,
        threshold=0.5,
        n=len(anchors),
    )


def cmd_eval(args) -> int:
    handlers = {"cls": _eval_cls, "seg": _eval_seg, "det": _eval_det}
    report = handlers[args.task](args)
    _emit_report(report, args.out)
    return EXIT_OK


def cmd_loss_eval(args) -> int:
    kind = args.kind
    if kind in ("mse", "smooth_l1"):
        _require(args, ["pred", "target"], f"--kind {kind}")
        pred = _read_column_csv(Path(args.pred), "dx,dy,dw,dh", 4)
        target = _read_column_csv(Path(args.target), "dx,dy,dw,dh", 4)
        if kind == "mse":
            result = losses.mse(pred, target)
        else:
            result = losses.smooth_l1(pred, target, beta=args.beta)
        n = pred.shape[0]
    else:
        _require(args, ["scores"], f"--kind {kind}")
        scores, labels = _read_scored_csv(Path(args.scores))
        if args.logits:
            batch = losses.ScoredBatch.from_logits(labels, scores)
        else:
            batch = losses.ScoredBatch.from_probabilities(labels, scores)
        if kind == "bce":
            result = losses.bce(batch)
        elif kind == "weighted_bce":
            weights = None
            if args.w_pos is not None:
                weights = losses.ClassWeights(w_pos=args.w_pos, w_neg=1.0 - args.w_pos)
            result = losses.weighted_bce(batch, weights)
        else:
            result = losses.focal_loss(batch, alpha=args.alpha, gamma=args.gamma)
        n = batch.n
    print(f'{{"kind":"{kind}","value":{result.value:.6f},"n":{n}}}')
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        cfg = data.SynthConfig(
            n_samples=args.n,
            image_size=args.size,
            tumor_fraction=args.tumor_fraction,
            radius_range=(args.radius_min, args.radius_max),
            noise_amplitude=args.noise,
            seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    records = data.generate_synthetic(cfg)
    manifest = data.write_dataset(records, args.out_dir)
    tumors = sum(1 for r in records if r.label == "tumor")
    print(f"synth {len(records)} records ({tumors} tumor) {manifest}")
    return EXIT_OK


def cmd_kfold(args) -> int:
    if args.n < 1 or args.k < 2 or args.k > args.n:
        raise UsageError(f"kfold requires 2 <= k <= n, got k={args.k}, n={args.n}")
    split = trainer.kfold_split(args.n, args.k, args.seed)
    print(json.dumps([list(fold) for fold in split.folds], separators=(",", ":")))
    return EXIT_OK


# --- wiring -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="anchorforge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("anchors-gen", help="generate an anchor grid CSV")
    p.add_argument("--scales", default="0.1,0.175,0.3")
    p.add_argument("--ratios", default="2,1,0.5")
    p.add_argument("--grid", default="32x32", help="grid as RxC, e.g. 32x32")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_anchors_gen)

    p = sub.add_parser("coverage", help="ground-truth coverage per IoU threshold")
    p.add_argument("--anchors", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--thresholds", default="0.3,0.5,0.75")
    p.add_argument("--drop-unmasked", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_coverage)

    p = sub.add_parser("targets-assign", help="label anchors against a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--anchors", required=True)
    p.add_argument("--pos-iou", type=float, default=0.5)
    p.add_argument("--fallback-iou", type=float, default=0.3)
    p.add_argument("--drop-unmasked", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_targets_assign)

    p = sub.add_parser("train-logreg", help="train the baseline classifier")
    p.add_argument("--manifest", required=True)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--drop-unmasked", action="store_true")
    p.add_argument("--model-out", required=True)
    p.set_defaults(func=cmd_train_logreg)

    p = sub.add_parser("eval", help="evaluate a task and emit a report")
    p.add_argument("--task", choices=("cls", "seg", "det"), required=True)
    p.add_argument("--scores", help="cls/det: CSV of scores")
    p.add_argument("--pred", help="seg: predicted probability image")
    p.add_argument("--gt", help="seg: mask image; det: box as cx,cy,w,h")
    p.add_argument("--anchors", help="det: anchor CSV")
    p.add_argument("--offsets", help="det: offsets CSV (default: zeros)")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("loss-eval", help="evaluate one loss on stored inputs")
    p.add_argument("--kind", choices=losses.LOSS_KINDS, required=True)
    p.add_argument("--scores", help="classification: CSV with score,label")
    p.add_argument("--logits", action="store_true", help="scores are logits")
    p.add_argument("--pred", help="regression: offsets CSV")
    p.add_argument("--target", help="regression: offsets CSV")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--gamma", type=float, default=2.0)
    p.add_argument("--w-pos", type=float, default=None)
    p.add_argument("--beta", type=float, default=1.0)
    p.set_defaults(func=cmd_loss_eval)

    p = sub.add_parser("synth", help="generate a seeded synthetic dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--tumor-fraction", type=float, default=0.5)
    p.add_argument("--radius-min", type=float, default=0.1)
    p.add_argument("--radius-max", type=float, default=0.25)
    p.add_argument("--noise", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("kfold", help="print seeded k-fold index sets as JSON")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_kfold)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"anchorforge: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except metrics.DegenerateLabelsError as exc:
        print(f"anchorforge: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"anchorforge: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def entrypoint() -> None:
    sys.exit(main())
