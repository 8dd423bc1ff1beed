"""Desk-scale handwritten-digit corpus builder.

Produces a 28x28 grayscale ten-class image corpus from the 8x8 digit
images bundled with scikit-learn, so the full training / scoring
pipeline can run offline at laptop scale:

1. normalize the 8x8 images from [0, 16] to [0, 1],
2. upsample 3x with nearest-neighbor (np.kron) to 24x24,
3. zero-pad by 2 pixels on each side to 28x28,
4. snap pixel values to the 1/255 grid so a round trip through the
   binary image-file format is exact,
5. split the base images into train / test pools (stratified, fixed
   split seed, independent of the augmentation seed),
6. grow the training split to the requested size by sampling base
   images and translating them by up to `max_shift` pixels.

The test split is left unaugmented.
"""

from __future__ import annotations

import numpy as np
from sklearn.datasets import load_digits
from sklearn.model_selection import train_test_split

from .classifier import LabeledDataset
from .experiments import shift_image

# ============================================================
# fixed geometry of the upsampled corpus
# ============================================================

UPSAMPLE = 3          # 8x8 -> 24x24
PAD = 2               # 24x24 -> 28x28
SIDE = 8 * UPSAMPLE + 2 * PAD
IMAGE_SHAPE = (SIDE, SIDE)
SPLIT_SEED = 0        # base train/test split is fixed, only augmentation varies
TEST_FRACTION = 0.2


def _upsample(images8):
    """(n, 8, 8) images in [0, 1] -> (n, 28, 28) on the 1/255 grid."""
    n = images8.shape[0]
    big = np.empty((n, SIDE, SIDE), dtype=float)
    kernel = np.ones((UPSAMPLE, UPSAMPLE))
    for i in range(n):
        up = np.kron(images8[i], kernel)
        big[i] = np.pad(up, PAD)
    # snap to the uint8 grid used by the image-file format
    return np.round(big * 255.0) / 255.0


def base_image_pools():
    """Upsampled base images split into train / test pools.

    Returns (train_images, train_labels, test_images, test_labels) where
    images are (n, 28, 28) arrays on the 1/255 grid.  The split is
    stratified by digit and uses a fixed seed so the pools never overlap
    across runs regardless of the augmentation seed.
    """
    bunch = load_digits()
    images8 = bunch.images / 16.0
    labels = bunch.target.astype(int)
    big = _upsample(images8)
    idx_train, idx_test = train_test_split(
        np.arange(len(labels)),
        test_size=TEST_FRACTION,
        random_state=SPLIT_SEED,
        stratify=labels,
    )
    return big[idx_train], labels[idx_train], big[idx_test], labels[idx_test]


def make_digit_corpus(train_size=5000, max_shift=2, seed=0):
    """Build the desk-scale digit corpus.

    Returns (train, test) LabeledDatasets with image_shape (28, 28).
    The training set holds `train_size` images sampled (with
    replacement) from the base training pool, each translated by an
    independent shift in {-max_shift..max_shift}^2 with zero fill.  The
    test set is the unaugmented base test pool.
    """
    if train_size < 1:
        raise ValueError("train_size must be positive")
    if max_shift < 0:
        raise ValueError("max_shift must be >= 0")
    pool_imgs, pool_labels, test_imgs, test_labels = base_image_pools()
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, len(pool_labels), size=train_size)
    shifts = rng.integers(-max_shift, max_shift + 1, size=(train_size, 2))
    train_imgs = np.empty((train_size, SIDE, SIDE), dtype=float)
    for i, (j, (dr, dc)) in enumerate(zip(picks, shifts)):
        train_imgs[i] = shift_image(pool_imgs[j], int(dr), int(dc))
    train = LabeledDataset(
        images=train_imgs.reshape(train_size, -1),
        labels=pool_labels[picks].copy(),
        image_shape=IMAGE_SHAPE,
    )
    test = LabeledDataset(
        images=test_imgs.reshape(len(test_labels), -1),
        labels=test_labels.copy(),
        image_shape=IMAGE_SHAPE,
    )
    return train, test
