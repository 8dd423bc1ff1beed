"""Command-line interface for training and influence scoring.

Subcommands
-----------
train                 fit a softmax classifier on an IDX image/label pair
fi-sample             influence records for each sample of a dataset
fi-layers             per-layer influence profile for each sample
fi-dataset            train/test influence records plus percentile table
fi-pixels             pixel-wise influence maps for one image
outliers simulate     build an overlapped-image outlier set
outliers scan         score a clean+outlier mixture and emit flags
outliers eval         ROC / precision-recall evaluation of a scan
attack one-pixel      influence-guided single-pixel attack on one image

Every command writes a ``*_summary.json`` (config echo, seed, timings)
into its output directory.  Tabular artifacts are plain CSV with
``repr``-exact floats so fixed-seed reruns reproduce them byte for byte;
timings never appear in CSVs.

Exit codes: 0 success, 1 validation or I/O failure, 2 usage errors.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .classifier import (
    Activation,
    LabeledDataset,
    TrainConfig,
    accuracy,
    forward,
    init_model,
    train_sgd,
)
from .dataio import (
    load_model,
    read_idx,
    read_records,
    save_model,
    write_grid_csv,
    write_idx,
    write_json,
    write_records,
    write_table,
)
from .experiments import (
    MEASURE_NAMES,
    OBJECTIVE_KINDS,
    PATCH_SCALES,
    OutlierSpec,
    one_pixel_attack,
    percentile_report,
    pixel_fi_map,
    roc_pr,
    score_dataset,
    simulate_outliers,
)
from .influence import CrossEntropyPred, CrossEntropyTrue
from .manifold import AllParamsTarget, InputTarget, LayerTarget

DEFAULT_PERCENTILES = "75,80,85,90,95,98,99,100"

# ============================================================
# small shared helpers
# ============================================================


def _parse_target(text):
    if text == "input":
        return InputTarget()
    if text == "all-params":
        return AllParamsTarget()
    if text.startswith("layer:"):
        tail = text.split(":", 1)[1]
        try:
            return LayerTarget(int(tail))
        except ValueError:
            raise ValueError(f"bad layer index in target {text!r}")
    raise ValueError(
        f"unknown target {text!r}; expected input, all-params, or layer:N"
    )


def _parse_ints(text, what):
    try:
        vals = [int(t) for t in text.split(",") if t.strip() != ""]
    except ValueError:
        raise ValueError(f"{what} must be a comma-separated integer list, got {text!r}")
    if not vals:
        raise ValueError(f"{what} list is empty")
    return vals


def _parse_floats(text, what):
    try:
        vals = [float(t) for t in text.split(",") if t.strip() != ""]
    except ValueError:
        raise ValueError(f"{what} must be a comma-separated number list, got {text!r}")
    if not vals:
        raise ValueError(f"{what} list is empty")
    return vals


def _parse_measures(text):
    measures = tuple(t.strip() for t in text.split(",") if t.strip())
    bad = [m for m in measures if m not in MEASURE_NAMES]
    if bad:
        raise ValueError(f"unknown measures {bad}; valid: {MEASURE_NAMES}")
    if not measures:
        raise ValueError("at least one measure is required")
    return measures


def _load_dataset(images_path, labels_path, limit=None):
    ds = read_idx(images_path, labels_path)
    if limit is not None:
        if limit < 1:
            raise ValueError("--limit must be positive")
        if limit < len(ds):
            ds = ds.take(np.arange(limit))
    return ds


def _outdir(args):
    path = Path(args.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _config_echo(args):
    skip = {"func", "summary_name"}
    return {k: v for k, v in vars(args).items() if k not in skip}


def _write_summary(args, outdir, started, extras):
    doc = {
        "command": args.summary_name.replace("_", " "),
        "version": __version__,
        "config": _config_echo(args),
        "elapsed_seconds": round(time.monotonic() - started, 3),
    }
    doc.update(extras)
    path = outdir / f"{args.summary_name}_summary.json"
    write_json(doc, path)
    return path


def _mean_or_none(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


# ============================================================
# train
# ============================================================


def cmd_train(args):
    started = time.monotonic()
    outdir = _outdir(args)
    ds = _load_dataset(args.images, args.labels, args.limit)
    arch = _parse_ints(args.arch, "--arch")
    if arch[0] != ds.images.shape[1]:
        raise ValueError(
            f"architecture input size {arch[0]} does not match "
            f"image size {ds.images.shape[1]}"
        )
    if int(ds.labels.max()) >= arch[-1]:
        raise ValueError(
            f"labels reach {int(ds.labels.max())} but the architecture "
            f"has only {arch[-1]} output classes"
        )
    model = init_model(tuple(arch), Activation(args.activation), seed=args.seed)
    config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        seed=args.seed,
    )
    trained, losses = train_sgd(model, ds, config)
    model_path = Path(args.model_out) if args.model_out else outdir / "model.json"
    model_path.parent.mkdir(parents=True, exist_ok=True)
    save_model(trained, model_path)
    acc = accuracy(trained, ds)
    _write_summary(
        args,
        outdir,
        started,
        {
            "model_path": str(model_path),
            "sample_count": len(ds),
            "architecture": arch,
            "train_accuracy": acc,
            "epoch_losses": losses,
        },
    )
    print(
        f"trained {'-'.join(map(str, arch))} on {len(ds)} samples: "
        f"accuracy {acc:.4f}, model -> {model_path}"
    )
    return 0


# ============================================================
# fi-sample
# ============================================================


def cmd_fi_sample(args):
    started = time.monotonic()
    outdir = _outdir(args)
    model = load_model(args.model)
    ds = _load_dataset(args.images, args.labels, args.limit)
    target = _parse_target(args.target)
    measures = _parse_measures(args.measures)
    records = score_dataset(
        model, ds, target, objective=args.objective, measures=measures, workers=args.workers
    )
    records_path = outdir / "records.csv"
    write_records(records, records_path)
    means = {m: _mean_or_none(getattr(r, m) for r in records) for m in measures}
    _write_summary(
        args,
        outdir,
        started,
        {"records_path": str(records_path), "record_count": len(records), "mean": means},
    )
    shown = ", ".join(f"mean {m}={means[m]:.6g}" for m in measures)
    print(f"scored {len(records)} samples against {args.target}: {shown}")
    return 0


# ============================================================
# fi-layers
# ============================================================


def cmd_fi_layers(args):
    started = time.monotonic()
    outdir = _outdir(args)
    model = load_model(args.model)
    ds = _load_dataset(args.images, args.labels, args.limit)
    measures = _parse_measures(args.measures)
    targets = [LayerTarget(ell) for ell in range(len(model.layers))]
    targets.append(AllParamsTarget())
    per_target = [
        score_dataset(
            model, ds, t, objective=args.objective, measures=measures, workers=args.workers
        )
        for t in targets
    ]
    # interleave sample-major so each sample's profile is contiguous
    records = [per_target[t][i] for i in range(len(ds)) for t in range(len(targets))]
    records_path = outdir / "records.csv"
    write_records(records, records_path)
    mean_fi = {
        recs[0].target: _mean_or_none(r.fi for r in recs) for recs in per_target
    }
    violations = 0
    if "fi" in measures:
        all_fi = per_target[-1]
        for recs in per_target[:-1]:
            for rec, ref in zip(recs, all_fi):
                if rec.fi > ref.fi * (1.0 + 1e-8) + 1e-12:
                    violations += 1
    _write_summary(
        args,
        outdir,
        started,
        {
            "records_path": str(records_path),
            "record_count": len(records),
            "layer_count": len(model.layers),
            "mean_fi": mean_fi,
            "dominance_violations": violations,
        },
    )
    print(
        f"profiled {len(ds)} samples over {len(model.layers)} layers "
        f"(+all-params); dominance violations: {violations}"
    )
    return 0


# ============================================================
# fi-dataset
# ============================================================


def cmd_fi_dataset(args):
    started = time.monotonic()
    outdir = _outdir(args)
    model = load_model(args.model)
    train_ds = _load_dataset(args.train_images, args.train_labels, args.limit)
    test_ds = _load_dataset(args.test_images, args.test_labels, args.limit)
    target = _parse_target(args.target)
    measures = _parse_measures(args.measures)
    if "fi" not in measures:
        raise ValueError("fi-dataset requires the fi measure for its percentile table")
    percentiles = _parse_ints(args.percentiles, "--percentiles")
    results = {}
    for name, ds in (("train", train_ds), ("test", test_ds)):
        records = score_dataset(
            model, ds, target, objective=args.objective, measures=measures,
            workers=args.workers,
        )
        write_records(records, outdir / f"{name}_records.csv")
        results[name] = records
    train_report = percentile_report([r.fi for r in results["train"]], percentiles)
    test_report = percentile_report([r.fi for r in results["test"]], percentiles)
    rows = [
        [str(q), repr(float(tv)), repr(float(sv))]
        for (q, tv), (_, sv) in zip(train_report, test_report)
    ]
    write_table(outdir / "percentiles.csv", ["percentile", "train_fi", "test_fi"], rows)
    _write_summary(
        args,
        outdir,
        started,
        {
            "train_count": len(results["train"]),
            "test_count": len(results["test"]),
            "mean_fi": {
                "train": _mean_or_none(r.fi for r in results["train"]),
                "test": _mean_or_none(r.fi for r in results["test"]),
            },
            "percentiles": {
                "train": {str(q): v for q, v in train_report},
                "test": {str(q): v for q, v in test_report},
            },
        },
    )
    print(
        f"scored train ({len(results['train'])}) and test ({len(results['test'])}) "
        f"against {args.target}; percentile table -> {outdir / 'percentiles.csv'}"
    )
    return 0


# ============================================================
# fi-pixels
# ============================================================


def cmd_fi_pixels(args):
    started = time.monotonic()
    outdir = _outdir(args)
    model = load_model(args.model)
    ds = _load_dataset(args.images, args.labels)
    if not (0 <= args.index < len(ds)):
        raise ValueError(f"--index {args.index} outside dataset of {len(ds)} images")
    scales = tuple(_parse_ints(args.scales, "--scales"))
    image = ds.images[args.index]
    if args.objective == "true-label":
        objective = CrossEntropyTrue(int(ds.labels[args.index]))
    else:
        objective = CrossEntropyPred()
    fmap = pixel_fi_map(
        model,
        image,
        ds.image_shape,
        objective=objective,
        scales=scales,
        channel_mode=args.channel_mode,
    )
    peaks = []
    for k in scales:
        grid = fmap.maps[k]
        write_grid_csv(grid, outdir / f"pixel_fi_scale{k}.csv")
        r, c = np.unravel_index(int(np.argmax(grid)), grid.shape)
        peaks.append({"scale": k, "row": int(r), "col": int(c), "max_fi": float(grid[r, c])})
    probs = forward(model, image)
    y_pred = int(np.argmax(probs))
    _write_summary(
        args,
        outdir,
        started,
        {
            "sample_id": int(ds.ids[args.index]),
            "y_true": int(ds.labels[args.index]),
            "y_pred": y_pred,
            "p_pred": float(probs[y_pred]),
            "peaks": peaks,
        },
    )
    print(
        f"pixel maps for image {args.index} at scales {list(scales)} -> {outdir}"
    )
    return 0


# ============================================================
# outliers
# ============================================================


def cmd_outliers_simulate(args):
    started = time.monotonic()
    outdir = _outdir(args)
    ds = _load_dataset(args.images, args.labels)
    spec = OutlierSpec(count=args.count, max_shift=args.max_shift, seed=args.seed)
    out = simulate_outliers(ds, spec)
    images_path = outdir / f"{args.prefix}-images.idx"
    labels_path = outdir / f"{args.prefix}-labels.idx"
    write_idx(out, images_path, labels_path)
    hist = {str(k): int(v) for k, v in zip(*np.unique(out.labels, return_counts=True))}
    _write_summary(
        args,
        outdir,
        started,
        {
            "images_path": str(images_path),
            "labels_path": str(labels_path),
            "outlier_count": len(out),
            "label_histogram": hist,
        },
    )
    print(f"simulated {len(out)} overlapped outliers -> {images_path}")
    return 0


def cmd_outliers_scan(args):
    started = time.monotonic()
    outdir = _outdir(args)
    model = load_model(args.model)
    clean = _load_dataset(args.clean_images, args.clean_labels)
    outliers = _load_dataset(args.outlier_images, args.outlier_labels)
    if clean.image_shape != outliers.image_shape:
        raise ValueError(
            f"image shapes differ: clean {clean.image_shape} vs "
            f"outliers {outliers.image_shape}"
        )
    merged = LabeledDataset(
        np.vstack([clean.images, outliers.images]),
        np.concatenate([clean.labels, outliers.labels]),
        ids=np.concatenate([clean.ids, len(clean) + outliers.ids]),
        image_shape=clean.image_shape,
    )
    target = _parse_target(args.target)
    measures = _parse_measures(args.measures)
    records = score_dataset(
        model, merged, target, objective=args.objective, measures=measures,
        workers=args.workers,
    )
    records_path = outdir / "records.csv"
    write_records(records, records_path)
    flags_path = outdir / "flags.csv"
    flags = [0] * len(clean) + [1] * len(outliers)
    write_table(
        flags_path,
        ["sample_id", "is_outlier"],
        [[str(int(i)), str(f)] for i, f in zip(merged.ids, flags)],
    )
    _write_summary(
        args,
        outdir,
        started,
        {
            "records_path": str(records_path),
            "flags_path": str(flags_path),
            "clean_count": len(clean),
            "outlier_count": len(outliers),
        },
    )
    print(
        f"scanned {len(merged)} samples ({len(outliers)} flagged outliers) "
        f"-> {records_path}"
    )
    return 0


def _read_flags(path):
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["sample_id", "is_outlier"]:
            raise ValueError(f"{path}: expected header sample_id,is_outlier")
        flags = {}
        for row in reader:
            if len(row) != 2:
                raise ValueError(f"{path}: malformed row {row!r}")
            flags[int(row[0])] = int(row[1])
    if not flags:
        raise ValueError(f"{path}: no flag rows")
    return flags


def cmd_outliers_eval(args):
    started = time.monotonic()
    outdir = _outdir(args)
    records = read_records(args.records)
    flag_by_id = _read_flags(args.flags)
    try:
        flags = [flag_by_id[r.sample_id] for r in records]
    except KeyError as e:
        raise ValueError(f"sample id {e.args[0]} missing from {args.flags}")
    measures = _parse_measures(args.measures)
    aucs = {}
    for m in measures:
        scores = [getattr(r, m) for r in records]
        if any(s is None for s in scores):
            raise ValueError(
                f"records lack {m} values; rerun the scan with --measures including {m}"
            )
        roc, pr = roc_pr(scores, flags)
        write_table(
            outdir / f"roc_{m}.csv",
            ["threshold", "fpr", "tpr"],
            [
                [repr(float(t)), repr(float(x)), repr(float(y))]
                for t, x, y in zip(roc.thresholds, roc.xs, roc.ys)
            ],
        )
        write_table(
            outdir / f"pr_{m}.csv",
            ["threshold", "recall", "precision"],
            [
                [repr(float(t)), repr(float(x)), repr(float(y))]
                for t, x, y in zip(pr.thresholds, pr.xs, pr.ys)
            ],
        )
        aucs[m] = {"roc_auc": float(roc.area), "pr_auc": float(pr.area)}
    _write_summary(
        args,
        outdir,
        started,
        {
            "record_count": len(records),
            "positive_count": int(sum(flags)),
            "auc": aucs,
        },
    )
    for m in measures:
        print(f"{m}: roc_auc={aucs[m]['roc_auc']:.6f} pr_auc={aucs[m]['pr_auc']:.6f}")
    return 0


# ============================================================
# attack
# ============================================================


def cmd_attack_one_pixel(args):
    started = time.monotonic()
    outdir = _outdir(args)
    model = load_model(args.model)
    ds = _load_dataset(args.images, args.labels)
    if not (0 <= args.index < len(ds)):
        raise ValueError(f"--index {args.index} outside dataset of {len(ds)} images")
    value_grid = _parse_floats(args.values, "--values") if args.values else None
    image = ds.images[args.index]
    result = one_pixel_attack(model, image, ds.image_shape, value_grid=value_grid)
    write_grid_csv(result.fi_map, outdir / "fi_map_scale1.csv")
    shape = ds.image_shape
    h, w = shape[0], shape[1]
    c = shape[2] if len(shape) == 3 else 1
    write_grid_csv(
        result.attacked_image.reshape(h, w * c), outdir / "attacked_image.csv"
    )
    attacked_probs = forward(model, result.attacked_image)
    y_after = int(np.argmax(attacked_probs))
    _write_summary(
        args,
        outdir,
        started,
        {
            "sample_id": int(ds.ids[args.index]),
            "pixel": {"row": int(result.pixel[0]), "col": int(result.pixel[1])},
            "value": float(result.value),
            "value_grid": [float(v) for v in result.value_grid],
            "y_true": int(ds.labels[args.index]),
            "y_pred_before": int(result.y_pred),
            "y_pred_after": y_after,
            "p_before": float(result.p_before),
            "p_after": float(result.p_after),
            "probability_drop": float(result.p_before - result.p_after),
            "changed_prediction": bool(y_after != result.y_pred),
        },
    )
    print(
        f"attacked pixel ({result.pixel[0]}, {result.pixel[1]}) with value "
        f"{result.value:g}: p {result.p_before:.4f} -> {result.p_after:.4f}"
    )
    return 0


# ============================================================
# parser
# ============================================================


def _add_output_dir(p):
    p.add_argument("--output-dir", default=".", help="directory for artifacts")


def _add_model_and_data(p):
    p.add_argument("--model", required=True, help="model document (JSON)")
    p.add_argument("--images", required=True, help="IDX image file")
    p.add_argument("--labels", required=True, help="IDX label file")


def _add_scoring_options(p, default_objective="true-label", default_measures="fi,jacobian_norm"):
    p.add_argument(
        "--objective",
        choices=OBJECTIVE_KINDS,
        default=default_objective,
        help="which class log-probability the loss tracks",
    )
    p.add_argument(
        "--measures",
        default=default_measures,
        help=f"comma-separated subset of {','.join(MEASURE_NAMES)}",
    )
    p.add_argument("--workers", type=int, default=1, help="scoring processes")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fisense",
        description="Sensitivity analysis for softmax classifiers.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("train", help="train a softmax classifier on IDX data")
    p.add_argument("--images", required=True, help="IDX image file")
    p.add_argument("--labels", required=True, help="IDX label file")
    p.add_argument("--arch", default="784,128,64,10", help="comma-separated layer sizes")
    p.add_argument("--activation", choices=["sigmoid", "relu"], default="sigmoid")
    p.add_argument("--epochs", type=int, default=12)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--learning-rate", type=float, default=0.5)
    p.add_argument("--seed", type=int, required=True, help="init and shuffle seed")
    p.add_argument("--limit", type=int, default=None, help="use only the first N samples")
    p.add_argument("--model-out", default=None, help="model path (default: OUTPUT_DIR/model.json)")
    _add_output_dir(p)
    p.set_defaults(func=cmd_train, summary_name="train")

    p = sub.add_parser("fi-sample", help="influence records for every sample")
    _add_model_and_data(p)
    p.add_argument("--target", default="input", help="input, all-params, or layer:N")
    _add_scoring_options(p)
    p.add_argument("--limit", type=int, default=None)
    _add_output_dir(p)
    p.set_defaults(func=cmd_fi_sample, summary_name="fi_sample")

    p = sub.add_parser("fi-layers", help="per-layer influence profile per sample")
    _add_model_and_data(p)
    _add_scoring_options(p, default_measures="fi")
    p.add_argument("--limit", type=int, default=None)
    _add_output_dir(p)
    p.set_defaults(func=cmd_fi_layers, summary_name="fi_layers")

    p = sub.add_parser("fi-dataset", help="train/test influence and percentile table")
    p.add_argument("--model", required=True)
    p.add_argument("--train-images", required=True)
    p.add_argument("--train-labels", required=True)
    p.add_argument("--test-images", required=True)
    p.add_argument("--test-labels", required=True)
    p.add_argument("--target", default="input")
    _add_scoring_options(p, default_objective="pred-label", default_measures="fi")
    p.add_argument("--percentiles", default=DEFAULT_PERCENTILES)
    p.add_argument("--limit", type=int, default=None)
    _add_output_dir(p)
    p.set_defaults(func=cmd_fi_dataset, summary_name="fi_dataset")

    p = sub.add_parser("fi-pixels", help="pixel-wise influence maps for one image")
    _add_model_and_data(p)
    p.add_argument("--index", type=int, default=0, help="image position in the file")
    p.add_argument(
        "--scales",
        default=",".join(str(k) for k in PATCH_SCALES),
        help="comma-separated odd patch sizes",
    )
    p.add_argument("--channel-mode", choices=["per-channel", "averaged"], default="averaged")
    p.add_argument("--objective", choices=OBJECTIVE_KINDS, default="pred-label")
    _add_output_dir(p)
    p.set_defaults(func=cmd_fi_pixels, summary_name="fi_pixels")

    outliers = sub.add_parser("outliers", help="outlier simulation, scanning, evaluation")
    osub = outliers.add_subparsers(dest="subcommand", required=True, metavar="STEP")

    p = osub.add_parser("simulate", help="build overlapped-image outliers")
    p.add_argument("--images", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--max-shift", type=int, default=4)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--prefix", default="outliers", help="output file stem")
    _add_output_dir(p)
    p.set_defaults(func=cmd_outliers_simulate, summary_name="outliers_simulate")

    p = osub.add_parser("scan", help="score a clean+outlier mixture")
    p.add_argument("--model", required=True)
    p.add_argument("--clean-images", required=True)
    p.add_argument("--clean-labels", required=True)
    p.add_argument("--outlier-images", required=True)
    p.add_argument("--outlier-labels", required=True)
    p.add_argument("--target", default="input")
    _add_scoring_options(p)
    _add_output_dir(p)
    p.set_defaults(func=cmd_outliers_scan, summary_name="outliers_scan")

    p = osub.add_parser("eval", help="ROC / PR evaluation of a scan")
    p.add_argument("--records", required=True, help="records.csv from a scan")
    p.add_argument("--flags", required=True, help="flags.csv from a scan")
    p.add_argument("--measures", default="fi,jacobian_norm")
    _add_output_dir(p)
    p.set_defaults(func=cmd_outliers_eval, summary_name="outliers_eval")

    attack = sub.add_parser("attack", help="adversarial probes")
    asub = attack.add_subparsers(dest="subcommand", required=True, metavar="KIND")

    p = asub.add_parser("one-pixel", help="influence-guided single-pixel attack")
    _add_model_and_data(p)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--values", default=None, help="candidate pixel values (comma-separated)")
    _add_output_dir(p)
    p.set_defaults(func=cmd_attack_one_pixel, summary_name="attack_one_pixel")

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        code = e.code
        if code is None:
            return 0
        return code if isinstance(code, int) else 1
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
