#!/usr/bin/env python3
"""Train/test sensitivity comparison via the CLI pipeline.

Builds the corpus (if missing), trains the default digit classifier, and
emits influence records for the training and test sets side by side with
a percentile table (test-set influence typically runs higher at the top
percentiles, the overfitting signature).
"""

import argparse
import sys
from pathlib import Path

from fisense import cli


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--epochs", type=int, default=12)
    parser.add_argument("--limit", type=int, default=None, help="cap per-side sample count")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--data-dir", default=None, help="existing IDX corpus directory")
    parser.add_argument("--output-dir", default="traintest_study")
    args = parser.parse_args(argv)

    outdir = Path(args.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    data_dir = Path(args.data_dir) if args.data_dir else outdir / "data"
    if not (data_dir / "train-images.idx").exists():
        import make_digit_dataset

        rc = make_digit_dataset.main(
            ["--seed", str(args.seed), "--output-dir", str(data_dir)]
        )
        if rc != 0:
            return rc

    rc = cli.main(
        [
            "train",
            "--images", str(data_dir / "train-images.idx"),
            "--labels", str(data_dir / "train-labels.idx"),
            "--epochs", str(args.epochs),
            "--learning-rate", "0.5",
            "--seed", str(args.seed),
            "--output-dir", str(outdir),
        ]
    )
    if rc != 0:
        return rc
    argv_ds = [
        "fi-dataset",
        "--model", str(outdir / "model.json"),
        "--train-images", str(data_dir / "train-images.idx"),
        "--train-labels", str(data_dir / "train-labels.idx"),
        "--test-images", str(data_dir / "test-images.idx"),
        "--test-labels", str(data_dir / "test-labels.idx"),
        "--workers", str(args.workers),
        "--output-dir", str(outdir),
    ]
    if args.limit is not None:
        argv_ds += ["--limit", str(args.limit)]
    return cli.main(argv_ds)


if __name__ == "__main__":
    sys.exit(main())
