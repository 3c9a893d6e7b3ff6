import numpy as np
import pytest

from moodsig.cohort import LabeledWindow
from moodsig.features import (
    MODEL_KINDS,
    baseline_features,
    feature_names,
    featurize,
    rmssd,
    signature_features,
    window_features_baseline,
    window_features_signature,
)
from moodsig.signature import signature
from oracles import quadrature_signature


def win(*values):
    return LabeledWindow("p", 0, len(values), tuple(values), False)


def test_signature_width():
    assert window_features_signature(win(3.0, 1.0, None, 7.0)).shape == (20,)


def test_constant_window_has_zero_signature():
    assert not np.any(window_features_signature(win(5.0, 5.0, 5.0, 5.0)))


def test_matches_step_by_step_composition():
    # hand-built: ((3,0),(3,1),(5,0),(5,0)) lead-lagged into (v, m, v', m')
    stream = [(3, 0), (3, 1), (5, 0), (5, 0)]
    pts = []
    for i in range(len(stream) - 1):
        pts.append(stream[i] + stream[i])
        pts.append(stream[i + 1] + stream[i])
    pts.append(stream[-1] + stream[-1])
    expected = quadrature_signature(np.array(pts, float), 2)
    np.testing.assert_allclose(window_features_signature(win(3.0, None, 5.0, 5.0)), expected, atol=1e-12)


def test_fully_observed_indicator_contributes_nothing():
    f = window_features_signature(win(1.0, 4.0, 2.0, 8.0, 3.0))
    names = feature_names("Sig")
    for name, v in zip(names, f):
        if "m" in name.replace("mean", ""):
            assert v == 0.0


def test_batch_matches_single():
    rng = np.random.default_rng(2)
    vals = rng.integers(0, 27, size=(30, 6)).astype(float)
    vals[rng.random(vals.shape) < 0.3] = np.nan
    vals[:, :2] = [1.0, 2.0]
    batch = signature_features(vals)
    for row, b in zip(vals, batch):
        np.testing.assert_allclose(window_features_signature(row), b, atol=1e-12)
    for kind in ("Mean", "Rmssd", "MissRes", "MRM"):
        bb = baseline_features(vals, kind)
        for row, b in zip(vals, bb):
            np.testing.assert_allclose(window_features_baseline(row, kind), b, atol=1e-12)


@pytest.mark.parametrize("values, expected", [((5, 5, 5), 0.0), ((1, 3, 1, 3), 2.0), ((1, None, 3), 2.0)])
def test_rmssd(values, expected):
    assert rmssd(values) == pytest.approx(expected)


def test_rmssd_needs_two_values():
    with pytest.raises(ValueError):
        rmssd((None, 3, None))


def test_baseline_kinds():
    w = win(4.0, 6.0, None, 8.0)
    assert window_features_baseline(w, "Mean").tolist() == [6.0]
    assert window_features_baseline(w, "MissRes").tolist() == [1.0]
    assert window_features_baseline(w, "Rmssd").tolist() == pytest.approx([2.0])
    assert window_features_baseline(w, "MRM").tolist() == pytest.approx([6.0, 2.0, 1.0])
    with pytest.raises(ValueError):
        window_features_baseline(w, "Median")


def test_featurize_dispatch_widths():
    vals = np.array([[1.0, 2.0, np.nan, 4.0]])
    widths = {kind: featurize(vals, kind).shape[1] for kind in MODEL_KINDS}
    assert widths == {"Sig": 20, "MRM": 3, "Mean": 1, "Rmssd": 1, "MissRes": 1}
    assert len(feature_names("Sig")) == 20


def test_signature_level_one_is_total_increment():
    vals = (2.0, None, 9.0, 4.0)
    f = window_features_signature(win(*vals))
    # lead value, lead indicator, lag value, lag indicator increments
    np.testing.assert_allclose(f[:4], [2.0, 0.0, 2.0, 0.0])
    assert signature(np.array([[0, 0], [1, 1]]), 1).coeffs.tolist() == [1, 1]
