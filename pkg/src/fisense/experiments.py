"""Desk-scale experiment protocols built on the influence measures.

Four protocols: synthetic outlier injection for detection studies (overlap
two training images of different classes with a random shift, label from
either source class), whole-dataset scoring into influence records,
per-layer sensitivity profiles, and pixel-space analyses (multi-scale
influence maps and the one-pixel attack they guide). Curve/percentile
utilities use fixed conventions: threshold sweeps over distinct scores,
trapezoidal ROC area, precision interpolation at observed recalls for the
PR area, nearest-rank percentiles.

Everything stochastic draws from an explicitly seeded generator; repeated
runs with the same config are bit-identical, independent of worker count.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .classifier import LabeledDataset, forward, logprob_grad_input
from .influence import (
    CrossEntropyPred,
    CrossEntropyTrue,
    InfluenceRecord,
    cook_max,
    evaluate,
    fi,
    resolve_label,
)
from .manifold import (
    AllParamsTarget,
    InputTarget,
    LayerTarget,
    PatchTarget,
    build_basis,
    describe_target,
    grad_nu,
    patch_indices,
)
from .numerics import RANK_TOL

MEASURE_NAMES = ("fi", "jacobian_norm", "cook_max")
OBJECTIVE_KINDS = ("true-label", "pred-label")
PATCH_SCALES = (1, 3, 5, 7)


# ==================== outlier simulation ====================


@dataclass(frozen=True)
class OutlierSpec:
    count: int
    max_shift: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.max_shift < 0:
            raise ValueError("max_shift must be >= 0")


def shift_image(plane, dr, dc):
    """Translate a 2-d (or 2-d + channel) array by (dr, dc), zero fill."""
    out = np.zeros_like(plane)
    h, w = plane.shape[:2]
    src_r = slice(max(-dr, 0), min(h - dr, h))
    dst_r = slice(max(dr, 0), min(h + dr, h))
    src_c = slice(max(-dc, 0), min(w - dc, w))
    dst_c = slice(max(dc, 0), min(w + dc, w))
    out[dst_r, dst_c] = plane[src_r, src_c]
    return out


def simulate_outliers(dataset, spec):
    """Synthesize overlap outliers from a labeled image dataset.

    Each outlier takes a distinct base image, overlays (pixelwise max) a
    partner image of a different class shifted by up to ``max_shift`` pixels
    in each direction, and labels the result with one of the two source
    labels chosen uniformly. Deterministic given ``spec.seed``; outlier ids
    continue after the largest dataset id so merged scans stay unambiguous.
    """
    if dataset.image_shape is None:
        raise ValueError("outlier simulation needs dataset.image_shape")
    n = len(dataset)
    if spec.count > n:
        raise ValueError(f"requested {spec.count} outliers but only {n} base images exist")
    labels = dataset.labels
    if np.unique(labels).size < 2:
        raise ValueError("outlier simulation needs at least two classes")
    rng = np.random.default_rng(spec.seed)
    base_ids = rng.choice(n, size=spec.count, replace=False)
    shape = dataset.image_shape
    images = np.empty((spec.count, dataset.images.shape[1]))
    out_labels = np.empty(spec.count, dtype=np.int64)
    for i, b in enumerate(base_ids):
        partners = np.nonzero(labels != labels[b])[0]
        partner = int(rng.choice(partners))
        dr, dc = (int(v) for v in rng.integers(-spec.max_shift, spec.max_shift + 1, size=2))
        base = dataset.images[b].reshape(shape)
        moved = shift_image(dataset.images[partner].reshape(shape), dr, dc)
        images[i] = np.maximum(base, moved).ravel()
        out_labels[i] = labels[b] if rng.integers(2) == 0 else labels[partner]
    start = int(dataset.ids.max()) + 1 if n else 0
    ids = np.arange(start, start + spec.count, dtype=np.int64)
    return LabeledDataset(images, out_labels, ids, dataset.image_shape)


# ==================== dataset scoring ====================


def _objective_for(kind, label):
    if kind == "true-label":
        return CrossEntropyTrue(int(label))
    return CrossEntropyPred()


def _score_one(model, x, y_true, sample_id, target, objective, measures, tol):
    obj = _objective_for(objective, y_true)
    vals = evaluate(model, x, target, obj, tol=tol)
    return InfluenceRecord(
        sample_id=int(sample_id),
        target=describe_target(target),
        fi=vals.fi if "fi" in measures else None,
        jacobian_norm=vals.jacobian_norm if "jacobian_norm" in measures else None,
        cook_max=cook_max(model, x, target, obj) if "cook_max" in measures else None,
        y_true=int(y_true),
        y_pred=vals.y_pred,
        p_pred=vals.p_pred,
        residual_ratio=vals.residual_ratio,
    )


def _score_slice(args):
    model, images, labels, ids, target, objective, measures, tol = args
    return [
        _score_one(model, x, y, sid, target, objective, measures, tol)
        for x, y, sid in zip(images, labels, ids)
    ]


def score_dataset(
    model,
    dataset,
    target,
    objective="true-label",
    measures=("fi", "jacobian_norm"),
    workers=1,
    tol=RANK_TOL,
):
    """Influence records for every sample, in dataset order.

    ``measures`` picks which columns get values; unrequested ones stay None.
    ``workers`` > 1 splits the dataset over a process pool; outputs are
    identical to the serial path.
    """
    if objective not in OBJECTIVE_KINDS:
        raise ValueError(f"objective must be one of {OBJECTIVE_KINDS}, got {objective!r}")
    bad = [m for m in measures if m not in MEASURE_NAMES]
    if bad:
        raise ValueError(f"unknown measures {bad}; valid: {MEASURE_NAMES}")
    if np.any(dataset.labels >= model.class_count):
        raise ValueError("dataset labels exceed the model's class range")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if workers == 1 or len(dataset) < 2 * workers:
        return _score_slice(
            (model, dataset.images, dataset.labels, dataset.ids, target, objective, measures, tol)
        )
    chunks = np.array_split(np.arange(len(dataset)), workers)
    payloads = [
        (model, dataset.images[c], dataset.labels[c], dataset.ids[c], target, objective, measures, tol)
        for c in chunks
        if c.size
    ]
    records = []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for part in pool.map(_score_slice, payloads):
            records.extend(part)
    return records


# ==================== layer sensitivity ====================


class LayerSensitivity(NamedTuple):
    per_layer: list     # fi for each layer's parameter block
    all_params: float   # fi for every trainable parameter jointly


def layer_sensitivity(model, x, objective, tol=RANK_TOL):
    """Per-layer influence profile; each entry is bounded by all_params."""
    per_layer = [
        fi(model, x, LayerTarget(ell), objective, tol=tol) for ell in range(len(model.layers))
    ]
    return LayerSensitivity(per_layer, fi(model, x, AllParamsTarget(), objective, tol=tol))


# ==================== curves and percentiles ====================


@dataclass(frozen=True)
class ScoredCurve:
    thresholds: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    area: float


def roc_pr(scores, flags):
    """ROC and PR curves from a score-descending threshold sweep.

    Thresholds are the distinct observed scores; a sample is flagged
    positive when its score >= threshold. ROC area by the trapezoidal rule
    on (FPR, TPR); PR area by precision interpolation at observed recalls.
    """
    scores = np.asarray(scores, dtype=np.float64)
    flags = np.asarray(flags)
    if scores.ndim != 1 or scores.shape != flags.shape:
        raise ValueError("scores and flags must be equal-length vectors")
    if scores.size < 2:
        raise ValueError("need at least two scored samples")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores contain non-finite entries")
    if not np.all(np.isin(flags, (0, 1))):
        raise ValueError("flags must be 0/1 outlier indicators")
    flags = flags.astype(np.int64)
    n_pos = int(flags.sum())
    n_neg = flags.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("flags are degenerate: need both classes present")

    order = np.argsort(-scores, kind="stable")
    s, f = scores[order], flags[order]
    cuts = np.append(np.nonzero(np.diff(s))[0], s.size - 1)  # end of each tie run
    tp = np.cumsum(f)[cuts].astype(np.float64)
    fp = np.cumsum(1 - f)[cuts].astype(np.float64)
    thresholds = s[cuts]

    tpr = tp / n_pos
    fpr = fp / n_neg
    roc_area = float(np.trapezoid(np.concatenate([[0.0], tpr]), np.concatenate([[0.0], fpr])))
    roc = ScoredCurve(thresholds, fpr, tpr, roc_area)

    precision = tp / (tp + fp)
    recall = tpr
    pr_area = float(np.sum(np.diff(np.concatenate([[0.0], recall])) * precision))
    pr = ScoredCurve(thresholds, recall, precision, pr_area)
    return roc, pr


def percentile_report(scores, percentiles):
    """Nearest-rank percentiles: value at index ceil(q/100 * n) of the
    ascending sort (the minimum for q = 0)."""
    s = np.sort(np.asarray(scores, dtype=np.float64))
    if s.size == 0:
        raise ValueError("cannot take percentiles of an empty score list")
    out = []
    for q in percentiles:
        if not 0 <= q <= 100:
            raise ValueError(f"percentile {q} outside [0, 100]")
        idx = 0 if q == 0 else math.ceil(q / 100.0 * s.size) - 1
        out.append((q, float(s[idx])))
    return out


# ==================== pixel influence maps ====================


@dataclass(frozen=True)
class PixelFiMap:
    maps: dict          # scale -> (rows, cols) array
    channel_mode: str


def _image_geometry(model, image, image_shape):
    image = np.asarray(image, dtype=np.float64)
    shape = tuple(int(d) for d in image_shape)
    if len(shape) == 2:
        shape = shape + (1,)
    if len(shape) != 3:
        raise ValueError(f"image_shape must be (rows, cols) or (rows, cols, channels)")
    if int(np.prod(shape)) != model.input_dim or image.size != model.input_dim:
        raise ValueError(
            f"image_shape {image_shape} incompatible with model input {model.input_dim}"
        )
    return image, shape


def pixel_fi_map(
    model,
    image,
    image_shape,
    objective=None,
    scales=PATCH_SCALES,
    channel_mode="per-channel",
    tol=RANK_TOL,
):
    """Pixel-wise influence maps at the requested patch scales.

    The per-class input gradient is computed once and sliced per patch, so a
    map entry is numerically identical to evaluating fi with that single
    patch target. ``channel_mode="averaged"`` computes one map per channel
    (single-channel patches) and averages them; "per-channel" perturbs all
    channels of the window jointly.
    """
    image, (h, w, c) = _image_geometry(model, image, image_shape)
    bad = [k for k in scales if k not in PATCH_SCALES]
    if bad:
        raise ValueError(f"patch scales {bad} unsupported; valid: {PATCH_SCALES}")
    if channel_mode not in ("per-channel", "averaged"):
        raise ValueError(f"unknown channel_mode {channel_mode!r}")
    objective = CrossEntropyPred() if objective is None else objective
    label = resolve_label(model, image, objective)
    grads = logprob_grad_input(model, image)  # (K, k0)
    sqrt_p = np.sqrt(forward(model, image))

    def fi_for_indices(idx):
        sub = grads[:, idx]
        l0 = sub.T * sqrt_p[None, :]
        basis = build_basis(l0, tol=tol)
        nu = grad_nu(-sub[label], basis)
        return float(nu.values @ nu.values)

    maps = {}
    for k in scales:
        if channel_mode == "averaged" and c > 1:
            acc = np.zeros((h, w))
            for ch in range(c):
                for r in range(h):
                    for col in range(w):
                        t = PatchTarget(r, col, k, h, w, c, channel=ch)
                        acc[r, col] += fi_for_indices(patch_indices(t))
            maps[k] = acc / c
        else:
            m = np.empty((h, w))
            for r in range(h):
                for col in range(w):
                    t = PatchTarget(r, col, k, h, w, c)
                    m[r, col] = fi_for_indices(patch_indices(t))
            maps[k] = m
    return PixelFiMap(maps, channel_mode)


# ==================== one-pixel attack ====================


@dataclass(frozen=True)
class AttackResult:
    pixel: tuple            # (row, col)
    value: float            # replacement written to every channel
    y_pred: int             # class whose probability the attack minimizes
    p_before: float
    p_after: float
    attacked_image: np.ndarray
    value_grid: tuple       # effective candidates after dedup/no-op removal
    fi_map: np.ndarray      # scale-1 selection map (None for attack_pixel)


def _candidate_values(original, value_grid):
    if value_grid is None:
        raw = [0.0, 1.0, min(max(original - 0.5, 0.0), 1.0), min(max(original + 0.5, 0.0), 1.0)]
    else:
        raw = [float(v) for v in value_grid]
    seen = []
    for v in raw:
        if v not in seen:
            seen.append(v)
    return seen


def attack_pixel(model, image, image_shape, pixel, value_grid=None):
    """Overwrite one pixel (all channels) with the grid value that most
    reduces the predicted-class probability."""
    image, (h, w, c) = _image_geometry(model, image, image_shape)
    r, col = int(pixel[0]), int(pixel[1])
    if not (0 <= r < h and 0 <= col < w):
        raise ValueError(f"pixel {pixel} outside {h}x{w} grid")
    probs = forward(model, image)
    y_pred = int(np.argmax(probs))
    flat = [(r * w + col) * c + ch for ch in range(c)]
    original = float(np.mean(image[flat]))
    candidates = [
        v for v in _candidate_values(original, value_grid)
        if not np.all(image[flat] == v)
    ]
    if not candidates:
        raise ValueError("no candidate value differs from the original pixel")
    best_v, best_p, best_img = None, None, None
    for v in candidates:
        attacked = image.copy()
        attacked[flat] = v
        p = float(forward(model, attacked)[y_pred])
        if best_p is None or p < best_p:
            best_v, best_p, best_img = v, p, attacked
    return AttackResult(
        pixel=(r, col),
        value=best_v,
        y_pred=y_pred,
        p_before=float(probs[y_pred]),
        p_after=best_p,
        attacked_image=best_img,
        value_grid=tuple(candidates),
        fi_map=None,
    )


def one_pixel_attack(model, image, image_shape, value_grid=None, tol=RANK_TOL):
    """Attack the pixel with the largest scale-1 influence map value.

    The map uses the predicted-class objective and, for multi-channel
    images, the channel-averaged mode; flat ties resolve to the first pixel
    in row-major order.
    """
    image, (h, w, c) = _image_geometry(model, image, image_shape)
    fmap = pixel_fi_map(
        model, image, image_shape, scales=(1,), channel_mode="averaged", tol=tol
    ).maps[1]
    pixel = np.unravel_index(int(np.argmax(fmap)), fmap.shape)
    res = attack_pixel(model, image, image_shape, pixel, value_grid=value_grid)
    return AttackResult(
        pixel=res.pixel,
        value=res.value,
        y_pred=res.y_pred,
        p_before=res.p_before,
        p_after=res.p_after,
        attacked_image=res.attacked_image,
        value_grid=res.value_grid,
        fi_map=fmap,
    )


@dataclass(frozen=True)
class AttackStudy:
    image_ids: np.ndarray
    fi_drops: np.ndarray       # per image: p_before - p_after, max-fi pixel
    random_drops: np.ndarray   # (images, trials): same grid, random pixels
    mean_fi_drop: float
    mean_random_drop: float


def one_pixel_attack_study(
    model,
    dataset,
    image_count=10,
    random_trials=20,
    confidence=0.9,
    seed=0,
    value_grid=None,
    selection="first",
):
    """Compare influence-guided against uniformly random one-pixel attacks.

    Candidate images are those predicted correctly with confidence
    (p_pred >= confidence and y_pred == y_true). ``selection`` picks
    ``image_count`` of them: "first" takes them in dataset order;
    "top-fi" ranks candidates by full-input influence (predicted-label
    objective, ties by dataset order) and attacks the most sensitive
    ones. Each chosen image gets one influence-guided attack plus
    ``random_trials`` random-pixel attacks with the same candidate grid.
    """
    if dataset.image_shape is None:
        raise ValueError("attack study needs dataset.image_shape")
    if selection not in ("first", "top-fi"):
        raise ValueError(f"unknown selection {selection!r}; use first or top-fi")
    shape = dataset.image_shape
    h, w = shape[0], shape[1]
    rng = np.random.default_rng(seed)
    candidates = []
    for i in range(len(dataset)):
        probs = forward(model, dataset.images[i])
        y_pred = int(np.argmax(probs))
        if y_pred == dataset.labels[i] and probs[y_pred] >= confidence:
            candidates.append(i)
            if selection == "first" and len(candidates) == image_count:
                break
    if len(candidates) < image_count:
        raise ValueError(
            f"only {len(candidates)} confidently correct images; need {image_count}"
        )
    if selection == "top-fi":
        ranked = sorted(
            candidates,
            key=lambda i: (
                -fi(model, dataset.images[i], InputTarget(), CrossEntropyPred()),
                i,
            ),
        )
        chosen = ranked[:image_count]
    else:
        chosen = candidates
    fi_drops = np.empty(image_count)
    random_drops = np.empty((image_count, random_trials))
    for row, i in enumerate(chosen):
        image = dataset.images[i]
        res = one_pixel_attack(model, image, shape, value_grid=value_grid)
        fi_drops[row] = res.p_before - res.p_after
        for t in range(random_trials):
            pixel = (int(rng.integers(h)), int(rng.integers(w)))
            rnd = attack_pixel(model, image, shape, pixel, value_grid=value_grid)
            random_drops[row, t] = rnd.p_before - rnd.p_after
    return AttackStudy(
        image_ids=dataset.ids[chosen],
        fi_drops=fi_drops,
        random_drops=random_drops,
        mean_fi_drop=float(fi_drops.mean()),
        mean_random_drop=float(random_drops.mean()),
    )
