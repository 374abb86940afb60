import numpy as np
import pytest
from scipy.spatial.distance import mahalanobis

from statfuse.distance import (
    cost_matrix,
    euclidean_matrix,
    mahalanobis_matrix,
    pooled_covariance,
    whitening,
)
from statfuse.errors import CalibrationError, ConfigurationError
from statfuse.frame import SampleFrame, detect_overlap
from statfuse.harmonize import HarmonizedPair, harmonize_pair

from conftest import random_frames


def frame(x, w, prefix):
    x = np.asarray(x, dtype=float).reshape(len(x), -1)
    return SampleFrame([f"{prefix}{i}" for i in range(len(x))], x, np.zeros((len(x), 0)), w)


def test_pooled_covariance_hand():
    # weights taken as given: X* = 0.5*0 + 0.5*4 = 2, N* = 2, mean 1, every unit one away
    rec, don = frame([0, 0], [1, 1], "a"), frame([2, 2], [1, 1], "b")
    pair = HarmonizedPair(rec, don, detect_overlap(rec, don), 0.5, np.array([2.0]), 2.0,
                          rec.weights, don.weights, {})
    assert pair.x_bar[0] == pytest.approx(1.0)
    assert pooled_covariance(pair)[0, 0] == pytest.approx(1.0)


def test_unreachable_harmonization_raises():
    # all recipient x are 0, so no positive reweighting reaches X* = 2
    with pytest.raises(CalibrationError, match="inconsistent"), pytest.warns(RuntimeWarning):
        harmonize_pair(frame([0, 0], [1, 1], "a"), frame([2, 2], [1, 1], "b"), alpha=0.5)


def test_pooled_covariance_no_dispersion():
    with pytest.warns(RuntimeWarning):
        pair = harmonize_pair(frame([[1.0, 2.0]], [3], "a"), frame([[1.0, 2.0]], [3], "a"))
    np.testing.assert_allclose(pooled_covariance(pair), 0.0, atol=1e-15)


def test_pooled_covariance_scale_free(rng):
    rec, don = random_frames(rng, 30, 40)
    base = pooled_covariance(harmonize_pair(rec, don))
    rec2 = SampleFrame(rec.ids, rec.x, rec.extra, 7 * rec.weights)
    don2 = SampleFrame(don.ids, don.x, don.extra, 7 * don.weights)
    np.testing.assert_allclose(pooled_covariance(harmonize_pair(rec2, don2)), base, rtol=1e-9)


def test_pooled_covariance_matches_moment_oracle(rng):
    rec, don = random_frames(rng, 25, 35, p=3)
    pair = harmonize_pair(rec, don)
    a = pair.alpha_star
    xbar = pair.x_bar
    om = np.zeros((3, 3))
    for x, w, c in ((rec.x, pair.w1, a), (don.x, pair.w2, 1 - a)):
        for xi, wi in zip(x, w):
            om += c * wi * np.outer(xi - xbar, xi - xbar)
    np.testing.assert_allclose(pooled_covariance(pair), om / pair.n_hat_star, rtol=1e-12)


def test_mahalanobis_identity_is_euclidean(rng):
    x1, x2 = rng.normal(size=(5, 3)), rng.normal(size=(4, 3))
    np.testing.assert_allclose(
        mahalanobis_matrix(x1, x2, np.eye(3)).values, euclidean_matrix(x1, x2).values, rtol=1e-14
    )


def test_mahalanobis_hand():
    assert mahalanobis_matrix([[0.0]], [[4.0]], [[4.0]]).values[0, 0] == pytest.approx(2.0)
    assert mahalanobis_matrix([[0.0]], [[4.0]], [[4.0]], kind="d2").values[0, 0] == pytest.approx(4.0)


def test_mahalanobis_exact_zero(rng):
    x = rng.normal(size=(6, 3))
    om = np.cov(x.T) + np.eye(3)
    d = mahalanobis_matrix(x, x, om).values
    np.testing.assert_array_equal(np.diag(d), 0.0)
    assert d.min() >= 0


def test_mahalanobis_matches_scipy(rng):
    x1, x2 = rng.normal(size=(5, 3)), rng.normal(size=(4, 3))
    a = rng.normal(size=(3, 3))
    om = a @ a.T + 0.1 * np.eye(3)
    vi = np.linalg.inv(om)
    ref = np.array([[mahalanobis(u, v, vi) for v in x2] for u in x1])
    np.testing.assert_allclose(mahalanobis_matrix(x1, x2, om).values, ref, rtol=1e-10)


def test_mahalanobis_affine_invariance(rng):
    rec, don = random_frames(rng, 20, 30, p=3)
    d0 = cost_matrix(harmonize_pair(rec, don)).values
    a = rng.normal(size=(3, 3)) + 3 * np.eye(3)
    shift = rng.normal(size=3)
    rec2 = SampleFrame(rec.ids, rec.x @ a.T + shift, rec.extra, rec.weights)
    don2 = SampleFrame(don.ids, don.x @ a.T + shift, don.extra, don.weights)
    d1 = cost_matrix(harmonize_pair(rec2, don2)).values
    np.testing.assert_allclose(d1, d0, rtol=1e-8, atol=1e-8)


def test_singular_omega_is_ridged():
    om = np.array([[1.0, 1.0], [1.0, 1.0]])
    m = whitening(om)
    assert np.all(np.isfinite(m))
    d = mahalanobis_matrix([[0.0, 0.0]], [[1.0, -1.0]], om).values
    assert np.isfinite(d[0, 0]) and d[0, 0] > 0


def test_bad_metric(rng):
    rec, don = random_frames(rng, 5, 5)
    with pytest.raises(ConfigurationError):
        cost_matrix(harmonize_pair(rec, don), metric="manhattan")
    with pytest.raises(ConfigurationError):
        cost_matrix(harmonize_pair(rec, don), kind="d3")
