#!/usr/bin/env python3
"""Layer-sensitivity study via the CLI pipeline.

Builds the corpus (if missing), trains the default digit classifier, and
produces a per-layer influence profile for the first N training images;
each sample's per-layer values are bounded by its all-parameters value.
"""

import argparse
import sys
from pathlib import Path

from fisense import cli


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--samples", type=int, default=200)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--epochs", type=int, default=12)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--data-dir", default=None, help="existing IDX corpus directory")
    parser.add_argument("--output-dir", default="layer_study")
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
    return cli.main(
        [
            "fi-layers",
            "--model", str(outdir / "model.json"),
            "--images", str(data_dir / "train-images.idx"),
            "--labels", str(data_dir / "train-labels.idx"),
            "--limit", str(args.samples),
            "--workers", str(args.workers),
            "--output-dir", str(outdir),
        ]
    )


if __name__ == "__main__":
    sys.exit(main())
