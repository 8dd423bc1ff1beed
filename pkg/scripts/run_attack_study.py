#!/usr/bin/env python3
"""One-pixel attack study: influence-guided vs random pixel choice.

Trains a rectified digit classifier, picks the confidently-correct test
images with the largest full-input influence, attacks each at the
scale-1 influence-map argmax pixel, and compares the probability drop
against random-pixel attacks with the same candidate values.
"""

import argparse
import sys
from pathlib import Path

from fisense.studies import run_attack_effectiveness


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--train-size", type=int, default=5000)
    parser.add_argument("--epochs", type=int, default=12)
    parser.add_argument("--activation", choices=["sigmoid", "relu"], default="relu")
    parser.add_argument("--learning-rate", type=float, default=0.1)
    parser.add_argument("--image-count", type=int, default=10)
    parser.add_argument("--random-trials", type=int, default=20)
    parser.add_argument("--confidence", type=float, default=0.9)
    parser.add_argument(
        "--selection", choices=["first", "top-fi"], default="top-fi",
        help="which confidently-correct images to attack",
    )
    parser.add_argument("--output-dir", default="attack_study")
    args = parser.parse_args(argv)

    outcome = run_attack_effectiveness(
        seed=args.seed,
        train_size=args.train_size,
        epochs=args.epochs,
        activation=args.activation,
        learning_rate=args.learning_rate,
        image_count=args.image_count,
        random_trials=args.random_trials,
        confidence=args.confidence,
        selection=args.selection,
        artifact_dir=Path(args.output_dir),
    )
    print(f"test accuracy: {outcome.test_accuracy:.4f}")
    print(f"guided mean probability drop: {outcome.mean_fi_drop:.5f}")
    print(f"random mean probability drop: {outcome.mean_random_drop:.5f}")
    guided_wins = outcome.mean_fi_drop > outcome.mean_random_drop
    print("guided attacks win" if guided_wins else "random attacks win")
    return 0


if __name__ == "__main__":
    sys.exit(main())
