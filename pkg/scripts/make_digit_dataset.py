#!/usr/bin/env python3
"""Build the desk-scale digit corpus as IDX files.

Writes train-images.idx / train-labels.idx (shift-augmented) and
test-images.idx / test-labels.idx (clean holdout) plus a manifest JSON,
so every CLI command can run against real files.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from fisense.dataio import write_idx, write_json
from fisense.digits import make_digit_corpus


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--train-size", type=int, default=5000)
    parser.add_argument("--max-shift", type=int, default=2)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--output-dir", default="data")
    args = parser.parse_args(argv)

    outdir = Path(args.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    train, test = make_digit_corpus(
        train_size=args.train_size, max_shift=args.max_shift, seed=args.seed
    )
    write_idx(train, outdir / "train-images.idx", outdir / "train-labels.idx")
    write_idx(test, outdir / "test-images.idx", outdir / "test-labels.idx")
    write_json(
        {
            "seed": args.seed,
            "train_size": len(train),
            "test_size": len(test),
            "max_shift": args.max_shift,
            "image_shape": list(train.image_shape),
            "train_label_histogram": {
                str(k): int(v) for k, v in zip(*np.unique(train.labels, return_counts=True))
            },
            "test_label_histogram": {
                str(k): int(v) for k, v in zip(*np.unique(test.labels, return_counts=True))
            },
        },
        outdir / "dataset_manifest.json",
    )
    print(f"wrote {len(train)} train / {len(test)} test images to {outdir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
