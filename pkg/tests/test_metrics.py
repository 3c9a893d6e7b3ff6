import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moodsig.metrics import UndefinedMetricError, auc, compute_metrics
from oracles import pairwise_auc, trapezoid_auc


def test_four_point_example():
    r = compute_metrics([0.9, 0.8, 0.3, 0.1], [1, 0, 1, 0], threshold=0.5)
    assert (r.tp, r.fp, r.tn, r.fn) == (1, 1, 1, 1)
    assert r.sensitivity == 0.5 and r.specificity == 0.5 and r.ppv == 0.5 and r.accuracy == 0.5
    # pairs (pos, neg): (0.9,0.8) (0.9,0.1) (0.3,0.1) win, (0.3,0.8) loses
    assert r.auc == 0.75


def test_perfect_separation():
    r = compute_metrics([0.9, 0.7, 0.2, 0.1], [1, 1, 0, 0])
    assert (r.sensitivity, r.specificity, r.accuracy, r.ppv, r.auc) == (1.0, 1.0, 1.0, 1.0, 1.0)


def test_all_ties_give_half():
    assert auc(np.full(7, 0.3), [1, 0, 0, 1, 0, 1, 0]) == 0.5


def test_single_class():
    with pytest.raises(UndefinedMetricError):
        auc([0.1, 0.2], [1, 1])
    r = compute_metrics([0.1, 0.7], [0, 0])
    assert r.auc is None and r.sensitivity is None and r.ppv == 0.0 and r.specificity == 0.5


def test_zero_denominator_is_undefined_not_zero():
    r = compute_metrics([0.1, 0.2, 0.3], [1, 0, 0])
    assert r.ppv is None and r.sensitivity == 0.0


def test_metrics_recomputable_from_counts():
    rng = np.random.default_rng(0)
    s = rng.random(200)
    y = rng.random(200) < 0.3
    r = compute_metrics(s, y, threshold=0.4, k=6, model="Sig", seed=3)
    assert r.accuracy == (r.tp + r.tn) / r.n
    assert r.sensitivity == r.tp / (r.tp + r.fn)
    assert r.specificity == r.tn / (r.tn + r.fp)
    assert (r.k, r.model, r.seed) == (6, "Sig", 3)


def test_empty_input():
    with pytest.raises(ValueError):
        compute_metrics([], [])


@pytest.mark.parametrize("seed", range(100))
def test_auc_matches_pair_enumeration_and_trapezoid(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 60))
    # coarse scores force plenty of ties
    scores = rng.integers(0, 8, size=n) / 7.0 if seed % 2 else rng.random(n)
    labels = rng.random(n) < 0.4
    labels[0], labels[1] = True, False
    a = auc(scores, labels)
    assert abs(a - pairwise_auc(scores, labels)) <= 1e-12
    assert abs(a - trapezoid_auc(scores, labels)) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(-20, 20), st.booleans()), min_size=2, max_size=40))
def test_auc_is_rank_invariant(pairs):
    scores = np.array([p[0] for p in pairs], dtype=float) / 4
    labels = np.array([p[1] for p in pairs])
    if labels.all() or not labels.any():
        return
    a = auc(scores, labels)
    assert 0.0 <= a <= 1.0
    assert auc(np.exp(scores), labels) == pytest.approx(a, abs=1e-12)
    assert auc(-scores, labels) == pytest.approx(1 - a, abs=1e-12)
