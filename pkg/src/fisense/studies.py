"""Repeatable desk-scale studies combining corpus, training, and scoring.

Two protocols live here so the experiment scripts and the acceptance
tests share one implementation:

* outlier detection: grow a digit training set, blend in overlapped
  two-source outliers, train on the contaminated mixture, score every
  training sample, and compare how well each influence measure ranks
  the planted outliers (ROC / precision-recall).
* one-pixel attack effectiveness: train on a clean corpus and compare
  influence-guided single-pixel attacks against random-pixel attacks
  on confidently-classified test images.

Every artifact CSV goes through the byte-deterministic writers, so a
rerun with the same seeds reproduces files exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .classifier import (
    Activation,
    LabeledDataset,
    TrainConfig,
    accuracy,
    init_model,
    train_sgd,
)
from .dataio import write_json, write_records, write_table
from .digits import make_digit_corpus
from .experiments import (
    OutlierSpec,
    one_pixel_attack_study,
    roc_pr,
    score_dataset,
    simulate_outliers,
)
from .manifold import InputTarget

DIGIT_ARCH = (784, 128, 64, 10)


def train_digit_model(
    train, seed, epochs=12, batch_size=32, learning_rate=0.5, activation="sigmoid"
):
    """Standard digit classifier fit used by all studies."""
    model = init_model(DIGIT_ARCH, Activation(activation), seed=seed)
    config = TrainConfig(
        epochs=epochs, batch_size=batch_size, learning_rate=learning_rate, seed=seed
    )
    trained, losses = train_sgd(model, train, config)
    return trained, losses


def _write_curves(outdir, measure, roc, pr):
    write_table(
        outdir / f"roc_{measure}.csv",
        ["threshold", "fpr", "tpr"],
        [
            [repr(float(t)), repr(float(x)), repr(float(y))]
            for t, x, y in zip(roc.thresholds, roc.xs, roc.ys)
        ],
    )
    write_table(
        outdir / f"pr_{measure}.csv",
        ["threshold", "recall", "precision"],
        [
            [repr(float(t)), repr(float(x)), repr(float(y))]
            for t, x, y in zip(pr.thresholds, pr.xs, pr.ys)
        ],
    )


# ============================================================
# outlier detection study
# ============================================================


@dataclass(frozen=True)
class OutlierOutcome:
    seed: int
    clean_count: int
    outlier_count: int
    train_accuracy: float      # on the contaminated training mixture
    test_accuracy: float       # on the clean held-out split
    auc: dict                  # measure -> {"roc_auc", "pr_auc"}


def run_outlier_detection(
    seed,
    train_size=5000,
    outlier_fraction=0.05,
    max_shift=4,
    epochs=12,
    batch_size=32,
    learning_rate=0.5,
    measures=("fi", "jacobian_norm"),
    workers=1,
    artifact_dir=None,
):
    """One seed of the outlier-detection protocol.

    The outliers are overlapped pairs built from the clean training set
    itself, appended to it (ids continue past the clean range), and the
    model is trained on the contaminated mixture. Scores use the
    true-label objective so mislabeled overlaps stand out.
    """
    train, test = make_digit_corpus(train_size=train_size, seed=seed)
    count = int(round(train_size * outlier_fraction))
    outliers = simulate_outliers(
        train, OutlierSpec(count=count, max_shift=max_shift, seed=seed)
    )
    merged = LabeledDataset(
        np.vstack([train.images, outliers.images]),
        np.concatenate([train.labels, outliers.labels]),
        ids=np.concatenate([train.ids, outliers.ids]),
        image_shape=train.image_shape,
    )
    model, _ = train_digit_model(
        merged, seed, epochs=epochs, batch_size=batch_size, learning_rate=learning_rate
    )
    records = score_dataset(
        model,
        merged,
        InputTarget(),
        objective="true-label",
        measures=measures,
        workers=workers,
    )
    flags = [0] * len(train) + [1] * len(outliers)
    auc = {}
    curves = {}
    for m in measures:
        roc, pr = roc_pr([getattr(r, m) for r in records], flags)
        auc[m] = {"roc_auc": float(roc.area), "pr_auc": float(pr.area)}
        curves[m] = (roc, pr)
    outcome = OutlierOutcome(
        seed=seed,
        clean_count=len(train),
        outlier_count=len(outliers),
        train_accuracy=accuracy(model, merged),
        test_accuracy=accuracy(model, test),
        auc=auc,
    )
    if artifact_dir is not None:
        outdir = Path(artifact_dir)
        outdir.mkdir(parents=True, exist_ok=True)
        write_records(records, outdir / "records.csv")
        write_table(
            outdir / "flags.csv",
            ["sample_id", "is_outlier"],
            [[str(int(i)), str(f)] for i, f in zip(merged.ids, flags)],
        )
        for m in measures:
            _write_curves(outdir, m, *curves[m])
        write_json(
            {
                "seed": seed,
                "clean_count": outcome.clean_count,
                "outlier_count": outcome.outlier_count,
                "train_accuracy": outcome.train_accuracy,
                "test_accuracy": outcome.test_accuracy,
                "auc": auc,
            },
            outdir / "outlier_outcome.json",
        )
    return outcome


# ============================================================
# one-pixel attack study
# ============================================================


@dataclass(frozen=True)
class AttackOutcome:
    seed: int
    train_accuracy: float
    test_accuracy: float
    image_ids: list
    fi_drops: list             # guided attack: p_before - p_after per image
    random_drops_mean: list    # per image, mean over random trials
    mean_fi_drop: float
    mean_random_drop: float


def run_attack_effectiveness(
    seed=0,
    train_size=5000,
    epochs=12,
    batch_size=32,
    learning_rate=0.1,
    activation="relu",
    image_count=10,
    random_trials=20,
    confidence=0.9,
    value_grid=None,
    selection="top-fi",
    artifact_dir=None,
):
    """Train on a clean corpus and measure guided vs random pixel attacks.

    Defaults pick the regime where pixel influence is informative about
    attack leverage: a rectified network (saturating sigmoids decouple
    the two, since the score is bounded by the label-purity of the
    gradient direction regardless of its magnitude) and attacks on the
    confidently-correct test images with the largest full-input
    influence, i.e. the images the measure itself flags as sensitive.
    """
    train, test = make_digit_corpus(train_size=train_size, seed=seed)
    model, _ = train_digit_model(
        train,
        seed,
        epochs=epochs,
        batch_size=batch_size,
        learning_rate=learning_rate,
        activation=activation,
    )
    study = one_pixel_attack_study(
        model,
        test,
        image_count=image_count,
        random_trials=random_trials,
        confidence=confidence,
        seed=seed,
        value_grid=value_grid,
        selection=selection,
    )
    outcome = AttackOutcome(
        seed=seed,
        train_accuracy=accuracy(model, train),
        test_accuracy=accuracy(model, test),
        image_ids=[int(i) for i in study.image_ids],
        fi_drops=[float(v) for v in study.fi_drops],
        random_drops_mean=[float(v) for v in study.random_drops.mean(axis=1)],
        mean_fi_drop=float(study.mean_fi_drop),
        mean_random_drop=float(study.mean_random_drop),
    )
    if artifact_dir is not None:
        outdir = Path(artifact_dir)
        outdir.mkdir(parents=True, exist_ok=True)
        write_table(
            outdir / "attack_drops.csv",
            ["image_id", "guided_drop", "random_drop_mean"],
            [
                [str(i), repr(g), repr(r)]
                for i, g, r in zip(
                    outcome.image_ids, outcome.fi_drops, outcome.random_drops_mean
                )
            ],
        )
        write_json(
            {
                "seed": seed,
                "activation": activation,
                "selection": selection,
                "train_accuracy": outcome.train_accuracy,
                "test_accuracy": outcome.test_accuracy,
                "image_ids": outcome.image_ids,
                "mean_fi_drop": outcome.mean_fi_drop,
                "mean_random_drop": outcome.mean_random_drop,
            },
            outdir / "attack_outcome.json",
        )
    return outcome
