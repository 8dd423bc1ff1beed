#!/usr/bin/env python3
"""Outlier-detection study: influence vs Jacobian-norm ranking.

For each seed: build a digit corpus, append overlapped two-source
outliers (5% by default), train on the contaminated mixture, score every
training sample, and compare how well each measure ranks the planted
outliers. Prints a per-seed table and writes per-seed artifacts plus an
aggregate summary.
"""

import argparse
import sys
from pathlib import Path

from fisense.dataio import write_json
from fisense.studies import run_outlier_detection


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", default="0,1,2", help="comma-separated seed list")
    parser.add_argument("--train-size", type=int, default=5000)
    parser.add_argument("--outlier-fraction", type=float, default=0.05)
    parser.add_argument("--max-shift", type=int, default=4)
    parser.add_argument("--epochs", type=int, default=12)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--output-dir", default="outlier_study")
    args = parser.parse_args(argv)

    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    outdir = Path(args.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)

    fi_wins = 0
    rows = []
    for seed in seeds:
        outcome = run_outlier_detection(
            seed,
            train_size=args.train_size,
            outlier_fraction=args.outlier_fraction,
            max_shift=args.max_shift,
            epochs=args.epochs,
            workers=args.workers,
            artifact_dir=outdir / f"seed{seed}",
        )
        fi_pr = outcome.auc["fi"]["pr_auc"]
        jac_pr = outcome.auc["jacobian_norm"]["pr_auc"]
        fi_wins += fi_pr >= jac_pr
        rows.append(
            {
                "seed": seed,
                "test_accuracy": outcome.test_accuracy,
                "fi_roc_auc": outcome.auc["fi"]["roc_auc"],
                "fi_pr_auc": fi_pr,
                "jacobian_roc_auc": outcome.auc["jacobian_norm"]["roc_auc"],
                "jacobian_pr_auc": jac_pr,
            }
        )
        print(
            f"seed {seed}: test_acc={outcome.test_accuracy:.4f}  "
            f"fi pr_auc={fi_pr:.4f}  jacobian pr_auc={jac_pr:.4f}  "
            f"{'fi wins' if fi_pr >= jac_pr else 'jacobian wins'}"
        )

    write_json(
        {"seeds": seeds, "fi_pr_wins": fi_wins, "per_seed": rows},
        outdir / "study_summary.json",
    )
    print(f"influence measure wins PR AUC in {fi_wins}/{len(seeds)} seeds -> {outdir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
