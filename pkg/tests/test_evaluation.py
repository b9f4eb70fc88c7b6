import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlcl.evaluation import (EvalConfig, MetricsRecord, attraction_repulsion_report, balanced_label_mask,
                             classification_metrics, clustering_sweep, collapse_demo, collapse_metric,
                             davies_bouldin, label_combination_classes, linear_evaluation, silhouette)

import oracles
from conftest import unit_rows


# ---------------------------------------------------------------- classification

def test_metrics_trivial_cases(rng):
    truth = rng.random((10, 4)) < 0.5
    truth[:, 0] = True
    perfect = classification_metrics(truth, truth)
    assert (perfect.micro_f1, perfect.macro_f1, perfect.hamming) == (1.0, 1.0, 0.0)
    assert classification_metrics(~truth, truth).hamming == 1.0


def test_metrics_hand_case():
    # label A: TP=1, FP=1, FN=0; label B: TP=1, FP=0, FN=1
    truth = np.array([[1, 1], [0, 1], [0, 0]])
    pred = np.array([[1, 1], [0, 0], [1, 0]])
    m = classification_metrics(pred, truth)
    assert m.micro_f1 == pytest.approx(2 / 3)
    assert m.macro_f1 == pytest.approx(2 / 3)
    assert m.hamming == pytest.approx(2 / 6)


def test_metrics_zero_division_convention():
    truth = np.array([[1, 0], [1, 0]])
    assert classification_metrics(truth, truth).macro_f1 == 0.5
    assert classification_metrics(truth, truth, zero_division=1.0).macro_f1 == 1.0
    with pytest.raises(ValueError, match="shape mismatch"):
        classification_metrics(truth, truth[:1])


@settings(max_examples=60)
@given(st.integers(0, 2**32), st.floats(0.05, 0.95))
def test_metrics_match_confusion_counts(seed, density):
    rng = np.random.default_rng(seed)
    pred = rng.random((50, 8)) < density
    truth = rng.random((50, 8)) < 0.3
    m = classification_metrics(pred, truth)
    assert (m.micro_f1, m.macro_f1, m.hamming) == pytest.approx(
        oracles.confusion_metrics(pred.tolist(), truth.tolist()), abs=1e-15)


def test_report_scales_hamming():
    rec = MetricsRecord(0.5, 0.25, 0.0123456).to_report()
    assert rec == {"micro_f1": 0.5, "macro_f1": 0.25, "hamming": 12.35}


# ---------------------------------------------------------------- linear evaluation

def separable_splits(rng):
    def draw(n):
        y = np.zeros((n, 2))
        y[np.arange(n), rng.integers(0, 2, n)] = 1
        centers = np.array([[4.0, 0.0, 0.0], [-4.0, 0.0, 0.0]])
        return y @ centers + 0.3 * rng.standard_normal((n, 3)), y
    return {"train": draw(200), "val": draw(100), "test": draw(200)}


def test_linear_eval_separable(rng):
    res = linear_evaluation(separable_splits(rng))
    assert res.metrics.micro_f1 >= 0.99
    assert res.absent_labels == []
    assert all(c in [(lr, d) for lr in (0.1, 0.01) for d in (1e-2, 1e-4)] for c in res.chosen)


def test_linear_eval_random_features_near_prevalence():
    # a predictor that ignores the input and fires at the prevalence rate p
    # has expected F1 = 2p*p/(p+p) = p
    rng = np.random.default_rng(0)
    p = 0.5
    splits = {k: (rng.standard_normal((n, 16)), (rng.random((n, 4)) < p).astype(float))
              for k, n in (("train", 600), ("val", 300), ("test", 1000))}
    assert abs(linear_evaluation(splits).metrics.micro_f1 - p) <= 0.05


def test_linear_eval_absent_label_predicted_negative(rng):
    splits = separable_splits(rng)
    splits = {k: (x, np.hstack([y, np.zeros((len(y), 1))])) for k, (x, y) in splits.items()}
    splits["test"][1][:5, 2] = 1
    res = linear_evaluation(splits)
    assert res.absent_labels == [2] and res.chosen[2] is None


def test_linear_eval_deterministic(rng):
    splits = separable_splits(rng)
    a, b = linear_evaluation(splits), linear_evaluation(splits)
    assert a.metrics == b.metrics and a.chosen == b.chosen


def test_full_grid():
    cfg = EvalConfig.full_grid()
    assert cfg.lrs == (1.0, 1e-1, 1e-2) and len(cfg.decays) == 5


# ---------------------------------------------------------------- combination classes

def test_combination_examples():
    same = np.tile([[1, 0, 1]], (6, 1))
    cc = label_combination_classes(same, 0.1)
    assert cc.n_classes == 1 and cc.retained.all()
    combos = [[1, 0, 0]] * 5 + [[0, 1, 0]] * 3 + [[0, 0, 1]] + [[1, 1, 0]]
    cc = label_combination_classes(np.array(combos), 0.5)
    assert cc.n_classes == 2 and cc.retained.sum() == 8
    assert cc.combos == [(0,), (1,)]
    assert label_combination_classes(np.array(combos), 1.0).retained.all()
    with pytest.raises(ValueError):
        label_combination_classes(np.array(combos), 0.0)


@settings(max_examples=50)
@given(st.integers(0, 2**32), st.floats(0.05, 1.0), st.floats(0.05, 1.0))
def test_combination_partition_and_monotone(seed, p1, p2):
    rng = np.random.default_rng(seed)
    y = (rng.random((40, 4)) < 0.4).astype(int)
    lo, hi = sorted((p1, p2))
    a, b = label_combination_classes(y, lo), label_combination_classes(y, hi)
    assert a.n_classes <= b.n_classes
    keys = [tuple(r) for r in y]
    for i in range(40):
        for j in range(40):
            if a.class_ids[i] >= 0 and a.class_ids[j] >= 0:
                assert (a.class_ids[i] == a.class_ids[j]) == (keys[i] == keys[j])
    counts = {k: keys.count(k) for k in set(keys)}
    kept = [counts[keys[i]] for i in range(40) if a.retained[i]]
    dropped = [counts[keys[i]] for i in range(40) if not a.retained[i]]
    if kept and dropped:
        assert min(kept) >= max(dropped)


# ---------------------------------------------------------------- silhouette / DBI

def test_silhouette_separated_clusters(rng):
    x = np.vstack([rng.normal(0, 0.1, (10, 3)), rng.normal(20, 0.1, (10, 3))])
    ids = [0] * 10 + [1] * 10
    assert silhouette(x, ids) > 0.9
    assert davies_bouldin(x, ids) < 0.02


def test_silhouette_arbitrary_split_is_not_positive(rng):
    x = rng.standard_normal((40, 3))
    ids = rng.integers(0, 2, 40)
    s = silhouette(x, ids)
    assert s == pytest.approx(oracles.silhouette(x.tolist(), ids.tolist()), abs=1e-9)
    assert s < 0.05


def test_silhouette_conventions():
    x = np.array([[0.0, 0.0], [1.0, 0.0], [5.0, 0.0]])
    assert silhouette(x, [0, 0, 1]) == pytest.approx(oracles.silhouette(x.tolist(), [0, 0, 1]), abs=1e-12)
    with pytest.raises(ValueError, match="undefined"):
        silhouette(x, [1, 1, 1])


@pytest.mark.parametrize("seed", range(5))
def test_metrics_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((30, 4))
    ids = rng.integers(0, 3, 30).tolist()
    assert abs(silhouette(x, ids) - oracles.silhouette(x.tolist(), ids)) < 1e-9
    assert abs(davies_bouldin(x, ids) - oracles.davies_bouldin(x.tolist(), ids)) < 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32))
def test_silhouette_rigid_motion_invariant(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((20, 3))
    ids = rng.integers(0, 3, 20)
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    moved = x @ q + rng.uniform(-10, 10, 3)
    assert silhouette(moved, ids) == pytest.approx(silhouette(x, ids), abs=1e-9)


def test_dbi_closed_form():
    sigma, dist = 0.5, 4.0
    offsets = np.array([[sigma, 0.0], [-sigma, 0.0], [0.0, sigma], [0.0, -sigma]])
    x = np.vstack([offsets, offsets + [dist, 0.0]])
    assert davies_bouldin(x, [0] * 4 + [1] * 4) == pytest.approx(2 * sigma / dist, abs=1e-15)


def test_dbi_degenerate_centroids():
    x = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    with pytest.raises(ValueError, match="degenerate centroids"):
        davies_bouldin(x, [0, 0, 1, 1])


def test_clustering_sweep(rng):
    y = (rng.random((80, 3)) < 0.4).astype(int)
    y[y.sum(1) == 0, 0] = 1
    x = rng.standard_normal((80, 5))
    rows = clustering_sweep(x, y, [0.5, 1.0])
    assert [r[0] for r in rows] == [0.5, 1.0]
    cc = label_combination_classes(y, 1.0)
    assert rows[1][1] == pytest.approx(silhouette(x, cc.class_ids), abs=1e-12)


# ---------------------------------------------------------------- attraction / repulsion

def test_attrep_extreme_configuration():
    e = np.array([1.0, 0.0])
    z = np.array([e, e, e, -e, -e])
    rep = attraction_repulsion_report(z, [0, 0, 0, 1, 1], 0)
    assert rep.s_att == [-1.0] * 3 and rep.s_rep == [-1.0] * 3
    assert rep.in_class == [0, 1, 2] and rep.out_class == [3, 4]
    assert rep.bound <= rep.actual + 1e-12


def test_attrep_matches_supcon_and_bound(rng):
    for _ in range(10):
        z = unit_rows(rng, 12, 8)
        ids = np.repeat([0, 1, 2], 4)
        rep = attraction_repulsion_report(z, ids, 1)
        inside = [i for i in range(12) if ids[i] == 1]
        actual = 0.0
        for i in inside:
            den = sum(math.exp(oracles.dot(z[i], z[k])) for k in range(12) if k != i)
            mates = [j for j in inside if j != i]
            actual += -sum(math.log(math.exp(oracles.dot(z[i], z[j])) / den) for j in mates) / len(mates)
        assert rep.actual == pytest.approx(actual, abs=1e-10)
        assert rep.gap >= -1e-9


def test_attrep_errors_and_determinism(rng):
    z = unit_rows(rng, 6, 4)
    with pytest.raises(ValueError, match="fewer than two"):
        attraction_repulsion_report(z, [0, 1, 1, 1, 1, 1], 0)
    with pytest.raises(ValueError):
        attraction_repulsion_report(z, [0] * 6, 0)
    ids = [0, 0, 1, 1, 2, 2]
    assert attraction_repulsion_report(z, ids, 2).to_dict() == attraction_repulsion_report(z, ids, 2).to_dict()


# ---------------------------------------------------------------- collapse

def test_collapse_metric_identical_sets():
    rep = collapse_metric([np.tile([1.0, 0.0], (3, 1)), np.tile([0.0, 1.0], (2, 1))])
    assert rep.within_variance == [0.0, 0.0]
    np.testing.assert_allclose(rep.off_diagonal_cosines(), [0.0, 0.0])
    with pytest.raises(ValueError):
        collapse_metric([np.zeros((0, 2))])


def test_balanced_label_mask():
    mask = balanced_label_mask(12, 3)
    assert np.all(mask.sum(axis=1) == 2)
    assert np.all(mask.sum(axis=0) == 8)


def test_collapse_three_labels_reaches_simplex():
    res = collapse_demo(n=40, n_labels=3, dim=8, steps=2000, seed=1)
    assert res.report.max_variance < 1e-3
    np.testing.assert_allclose(res.report.off_diagonal_cosines(), -0.5, atol=0.05)
    assert res.losses[-1] < res.losses[0]
