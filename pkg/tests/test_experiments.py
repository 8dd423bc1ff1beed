"""Experiment-protocol tests.

Curve areas are checked against hand-traced sweeps and against
sklearn.metrics as an independent oracle. The pixel-map oracle below
evaluates the single-pixel influence in closed form for a linear model:
per-class gradient at pixel q is W[y, q] - p . W[:, q], the 1-d metric is
sum_y P(y) g_y^2, and the influence is g_label^2 over that.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.metrics import average_precision_score, roc_auc_score

from conftest import make_binary_logistic, random_mlp
from fisense.classifier import (
    Activation,
    ClassifierModel,
    LabeledDataset,
    Layer,
    forward,
)
from fisense.experiments import (
    OutlierSpec,
    layer_sensitivity,
    one_pixel_attack,
    one_pixel_attack_study,
    attack_pixel,
    percentile_report,
    pixel_fi_map,
    roc_pr,
    score_dataset,
    simulate_outliers,
)
from fisense.influence import CrossEntropyPred, CrossEntropyTrue, fi
from fisense.manifold import AllParamsTarget, InputTarget, LayerTarget, PatchTarget


# ==================== roc / pr ====================


def test_roc_auc_frozen_lattice():
    roc, pr = roc_pr([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0])
    np.testing.assert_allclose(roc.area, 0.75, rtol=1e-12)


def test_roc_perfect_and_inverted():
    roc, pr = roc_pr([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
    np.testing.assert_allclose(roc.area, 1.0)
    np.testing.assert_allclose(pr.area, 1.0)
    roc_bad, _ = roc_pr([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0])
    np.testing.assert_allclose(roc_bad.area, 0.0)


def test_roc_pr_reject_degenerate_inputs():
    with pytest.raises(ValueError):
        roc_pr([0.5, 0.6], [1, 1])
    with pytest.raises(ValueError):
        roc_pr([0.5], [1, 0])
    with pytest.raises(ValueError):
        roc_pr([], [])
    with pytest.raises(ValueError):
        roc_pr([0.5, 0.6], [0, 2])


@settings(max_examples=100, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1), st.integers(min_value=2, max_value=60))
def test_roc_pr_match_sklearn(seed, n):
    rng = np.random.default_rng(seed)
    # coarse score grid so threshold ties actually occur
    scores = rng.integers(0, 6, size=n).astype(float) / 5.0
    flags = rng.integers(0, 2, size=n)
    if flags.min() == flags.max():
        flags[0] = 1 - flags[0]
    roc, pr = roc_pr(scores, flags)
    np.testing.assert_allclose(roc.area, roc_auc_score(flags, scores), atol=1e-12)
    np.testing.assert_allclose(pr.area, average_precision_score(flags, scores), atol=1e-12)
    assert 0.0 <= roc.area <= 1.0
    assert 0.0 < pr.area <= 1.0


# ==================== percentiles ====================


def test_percentile_nearest_rank_frozen():
    report = percentile_report([4.0, 2.0, 1.0, 3.0], [0, 50, 75, 95, 100])
    assert report == [(0, 1.0), (50, 2.0), (75, 3.0), (95, 4.0), (100, 4.0)]


def test_percentile_single_value():
    assert percentile_report([10.0], [0, 50, 100]) == [(0, 10.0), (50, 10.0), (100, 10.0)]


def test_percentile_validation():
    with pytest.raises(ValueError):
        percentile_report([], [50])
    with pytest.raises(ValueError):
        percentile_report([1.0], [101])


# ==================== outlier simulation ====================


def constant_image_dataset():
    n, side = 30, 6
    images = np.full((n, side * side), 0.3)
    images[n // 2 :] = 0.6
    labels = np.array([0] * (n // 2) + [1] * (n - n // 2))
    return LabeledDataset(images, labels, image_shape=(side, side))


def test_simulate_outliers_deterministic_and_labeled_from_pair():
    ds = constant_image_dataset()
    spec = OutlierSpec(count=20, max_shift=4, seed=7)
    out1 = simulate_outliers(ds, spec)
    out2 = simulate_outliers(ds, spec)
    np.testing.assert_array_equal(out1.images, out2.images)
    np.testing.assert_array_equal(out1.labels, out2.labels)
    assert len(out1) == 20
    assert set(np.unique(out1.labels)) <= {0, 1}
    assert len(set(np.unique(out1.labels))) == 2  # both source labels occur
    assert out1.images.min() >= 0.0 and out1.images.max() <= 1.0
    # ids continue beyond the training ids so a merged scan stays unambiguous
    assert set(out1.ids.tolist()).isdisjoint(set(ds.ids.tolist()))


def test_simulate_outliers_overlap_is_pixelwise_max_with_bounded_shift():
    side = 9
    base = np.zeros((2, side * side))
    base[0, 4 * side + 4] = 1.0   # class 0: delta at center
    base[1, 4 * side + 4] = 0.5   # class 1: dimmer delta at center
    ds = LabeledDataset(np.vstack([base[0]] * 5 + [base[1]] * 5),
                        np.array([0] * 5 + [1] * 5),
                        image_shape=(side, side))
    out = simulate_outliers(ds, OutlierSpec(count=8, max_shift=4, seed=3))
    for img in out.images:
        grid = img.reshape(side, side)
        nz = np.argwhere(grid > 0)
        assert 1 <= len(nz) <= 2
        for r, c in nz:
            assert max(abs(r - 4), abs(c - 4)) <= 4
        assert set(np.round(grid[grid > 0], 12)) <= {0.5, 1.0}


def test_simulate_outliers_errors():
    ds = constant_image_dataset()
    with pytest.raises(ValueError):
        simulate_outliers(ds, OutlierSpec(count=31, seed=0))
    single = LabeledDataset(np.full((4, 4), 0.5), np.zeros(4, dtype=int), image_shape=(2, 2))
    with pytest.raises(ValueError):
        simulate_outliers(single, OutlierSpec(count=2, seed=0))


# ==================== dataset scoring ====================


def small_scored_setup():
    rng = np.random.default_rng(0)
    images = rng.random((6, 4))
    labels = rng.integers(0, 3, size=6)
    ds = LabeledDataset(images, labels, image_shape=(2, 2))
    model = random_mlp((4, 5, 3), seed=1)
    return model, ds


def test_score_dataset_records_follow_dataset_order():
    model, ds = small_scored_setup()
    recs = score_dataset(model, ds, InputTarget(), objective="true-label")
    assert [r.sample_id for r in recs] == ds.ids.tolist()
    for r, y in zip(recs, ds.labels):
        assert r.y_true == y
        assert r.target == "input"
        assert r.fi >= 0.0
        assert r.jacobian_norm >= 0.0
        assert r.cook_max is None
        assert 0.0 <= r.p_pred <= 1.0


def test_score_dataset_measure_selection():
    model, ds = small_scored_setup()
    recs = score_dataset(model, ds, InputTarget(), measures=("fi",))
    assert all(r.jacobian_norm is None for r in recs)
    recs2 = score_dataset(model, ds, InputTarget(), measures=("fi", "jacobian_norm", "cook_max"))
    assert all(np.isfinite(r.cook_max) for r in recs2)


def test_score_dataset_pred_objective_uses_predicted_label():
    model, ds = small_scored_setup()
    recs = score_dataset(model, ds, InputTarget(), objective="pred-label")
    for r, x in zip(recs, ds.images):
        assert r.y_pred == int(np.argmax(forward(model, x)))


def test_score_dataset_parallel_equals_serial():
    model, ds = small_scored_setup()
    serial = score_dataset(model, ds, InputTarget(), measures=("fi", "jacobian_norm"))
    parallel = score_dataset(model, ds, InputTarget(), measures=("fi", "jacobian_norm"), workers=2)
    assert serial == parallel


def test_score_dataset_validates_inputs():
    model, ds = small_scored_setup()
    with pytest.raises(ValueError):
        score_dataset(model, ds, InputTarget(), objective="nope")
    with pytest.raises(ValueError):
        score_dataset(model, ds, InputTarget(), measures=("fi", "bogus"))
    bad = LabeledDataset(ds.images, np.full(6, 7), image_shape=(2, 2))
    with pytest.raises(ValueError):
        score_dataset(model, bad, InputTarget())


# ==================== layer sensitivity ====================


def test_layer_sensitivity_dominance_and_single_layer_equality():
    model, ds = small_scored_setup()
    x = ds.images[0]
    sens = layer_sensitivity(model, x, CrossEntropyTrue(int(ds.labels[0])))
    assert len(sens.per_layer) == 2
    for v in sens.per_layer:
        assert v <= sens.all_params + 1e-8
    single = make_binary_logistic([1.0, -1.0])
    s2 = layer_sensitivity(single, np.array([0.3, 0.4]), CrossEntropyPred())
    np.testing.assert_allclose(s2.per_layer[0], s2.all_params, rtol=1e-10)


# ==================== pixel maps ====================


def linear_image_model(side=3, classes=3, seed=0):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((classes, side * side))
    return ClassifierModel([Layer(w, 0.1 * rng.standard_normal(classes), Activation.IDENTITY)])


def test_pixel_map_matches_single_pixel_fi():
    model = linear_image_model()
    image = np.random.default_rng(1).random(9)
    fmap = pixel_fi_map(model, image, (3, 3), scales=(1, 3))
    assert set(fmap.maps) == {1, 3}
    for r in range(3):
        for c in range(3):
            t = PatchTarget(row=r, col=c, scale=1, height=3, width=3)
            np.testing.assert_allclose(
                fmap.maps[1][r, c], fi(model, image, t, CrossEntropyPred()), rtol=1e-12
            )


def test_pixel_map_matches_dense_linear_oracle():
    model = linear_image_model(seed=5)
    w = model.layers[0].weight
    image = np.random.default_rng(2).random(9)
    p = forward(model, image)
    label = int(np.argmax(p))
    fmap = pixel_fi_map(model, image, (3, 3), scales=(1,)).maps[1]
    for q in range(9):
        g = w[:, q] - float(p @ w[:, q])          # per-class gradient at pixel q
        metric = float(np.sum(p * g * g))
        expected = g[label] ** 2 / metric if metric > 1e-300 else 0.0
        np.testing.assert_allclose(fmap[q // 3, q % 3], expected, rtol=1e-8)


def test_pixel_map_scale_validation():
    model = linear_image_model()
    image = np.zeros(9)
    with pytest.raises(ValueError):
        pixel_fi_map(model, image, (3, 3), scales=(2,))
    with pytest.raises(ValueError):
        pixel_fi_map(model, image, (3, 3), scales=(9,))


def test_pixel_map_deterministic():
    model = linear_image_model(seed=3)
    image = np.random.default_rng(4).random(9)
    a = pixel_fi_map(model, image, (3, 3))
    b = pixel_fi_map(model, image, (3, 3))
    for k in a.maps:
        np.testing.assert_array_equal(a.maps[k], b.maps[k])


def test_pixel_map_averaged_mode_averages_single_channel_maps():
    rng = np.random.default_rng(6)
    model = ClassifierModel(
        [Layer(rng.standard_normal((3, 8)), np.zeros(3), Activation.IDENTITY)]
    )
    image = rng.random(8)  # 2x2x2 channel-last
    averaged = pixel_fi_map(model, image, (2, 2, 2), scales=(1,), channel_mode="averaged").maps[1]
    per_channel = []
    for ch in range(2):
        m = np.zeros((2, 2))
        for r in range(2):
            for c in range(2):
                t = PatchTarget(row=r, col=c, scale=1, height=2, width=2, channels=2, channel=ch)
                m[r, c] = fi(model, image, t, CrossEntropyPred())
        per_channel.append(m)
    np.testing.assert_allclose(averaged, (per_channel[0] + per_channel[1]) / 2.0, rtol=1e-10)


# ==================== one-pixel attack ====================


def test_one_pixel_attack_structure():
    model = linear_image_model(seed=7)
    image = np.random.default_rng(8).random(9)
    res = one_pixel_attack(model, image, (3, 3))
    fmap = pixel_fi_map(model, image, (3, 3), scales=(1,)).maps[1]
    assert res.pixel == tuple(np.unravel_index(np.argmax(fmap), fmap.shape))
    diff = np.nonzero(res.attacked_image != image)[0]
    assert diff.size == 1
    assert diff[0] == res.pixel[0] * 3 + res.pixel[1]
    assert 0.0 <= res.attacked_image.min() and res.attacked_image.max() <= 1.0
    # reported probability is the true minimum over the candidate grid
    best = min(
        forward(model, _with_pixel(image, diff[0], v))[res.y_pred]
        for v in res.value_grid
    )
    np.testing.assert_allclose(res.p_after, best, rtol=1e-12)
    np.testing.assert_allclose(res.p_before, forward(model, image)[res.y_pred], rtol=1e-12)


def _with_pixel(image, flat_idx, value):
    out = image.copy()
    out[flat_idx] = value
    return out


def test_attack_pixel_respects_grid_and_excludes_noop():
    model = linear_image_model(seed=9)
    image = np.full(9, 0.5)
    res = attack_pixel(model, image, (3, 3), (1, 1), value_grid=(0.5, 1.0))
    assert res.value == 1.0  # the no-op 0.5 is dropped
    with pytest.raises(ValueError):
        attack_pixel(model, image, (3, 3), (1, 1), value_grid=(0.5,))


def test_attack_multichannel_sets_all_channels():
    rng = np.random.default_rng(10)
    model = ClassifierModel(
        [Layer(rng.standard_normal((3, 8)), np.zeros(3), Activation.IDENTITY)]
    )
    image = rng.random(8)
    res = attack_pixel(model, image, (2, 2, 2), (0, 1))
    changed = np.nonzero(res.attacked_image != image)[0]
    assert set(changed.tolist()) <= {2, 3}  # both channels of pixel (0, 1)
    vals = res.attacked_image[[2, 3]]
    assert vals[0] == vals[1] == res.value


# ==================== attack study ====================


def _study_dataset(model, n=40, seed=11):
    rng = np.random.default_rng(seed)
    images = rng.random((n, 9))
    labels = np.array([int(np.argmax(forward(model, x))) for x in images])
    return LabeledDataset(images, labels, image_shape=(3, 3))


def test_attack_study_first_selection_uses_dataset_order():
    model = linear_image_model(seed=3)
    ds = _study_dataset(model)
    confident = [
        i
        for i in range(len(ds))
        if forward(model, ds.images[i]).max() >= 0.6
    ][:5]
    study = one_pixel_attack_study(
        model, ds, image_count=5, random_trials=3, confidence=0.6, seed=0
    )
    assert study.image_ids.tolist() == confident
    assert study.fi_drops.shape == (5,)
    assert study.random_drops.shape == (5, 3)
    assert study.mean_fi_drop == pytest.approx(study.fi_drops.mean())
    assert study.mean_random_drop == pytest.approx(study.random_drops.mean())


def test_attack_study_top_fi_selection_ranks_by_input_influence():
    model = linear_image_model(seed=3)
    ds = _study_dataset(model)
    confident = [
        i for i in range(len(ds)) if forward(model, ds.images[i]).max() >= 0.6
    ]
    ranked = sorted(
        confident,
        key=lambda i: (-fi(model, ds.images[i], InputTarget(), CrossEntropyPred()), i),
    )
    study = one_pixel_attack_study(
        model, ds, image_count=4, random_trials=2, confidence=0.6, seed=0,
        selection="top-fi",
    )
    assert study.image_ids.tolist() == ranked[:4]


def test_attack_study_validates_inputs():
    model = linear_image_model(seed=3)
    ds = _study_dataset(model)
    with pytest.raises(ValueError, match="selection"):
        one_pixel_attack_study(model, ds, selection="best")
    with pytest.raises(ValueError, match="confidently correct"):
        one_pixel_attack_study(model, ds, image_count=1000, confidence=0.6)
    flat = LabeledDataset(ds.images, ds.labels)  # no image_shape
    with pytest.raises(ValueError, match="image_shape"):
        one_pixel_attack_study(model, flat, image_count=2, confidence=0.6)
