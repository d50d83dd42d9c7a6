import json
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from transferdist.gmm import GmmConfig, GmmModel, bic, bic_value, fit_em, select_k


def lloyd_two_means(X, iters=50):
    """Plain k-means with K=2, started from the two extreme points along the first axis."""
    c = X[[np.argmin(X[:, 0]), np.argmax(X[:, 0])]]
    for _ in range(iters):
        lab = np.argmin(((X[:, None, :] - c[None]) ** 2).sum(-1), axis=1)
        c = np.array([X[lab == k].mean(0) for k in range(2)])
    return lab, c


def monotone(history, slack=1e-9):
    h = np.asarray(history)
    for a, b in zip(h[:-1], h[1:]):
        if np.isnan(a) or np.isnan(b):
            continue
        if b < a - slack * max(1.0, abs(a)):
            return False
    return True


def test_single_gaussian_k1_is_mle(rng):
    X = rng.multivariate_normal([1.0, -2.0], [[2.0, 0.6], [0.6, 1.0]], size=500)
    g = fit_em(X, 1)
    np.testing.assert_allclose(g.means[0], X.mean(0), rtol=1e-10)
    np.testing.assert_allclose(g.covariances[0], np.cov(X.T, bias=True), rtol=1e-10)
    se = np.sqrt(np.diag(np.cov(X.T)) / X.shape[0])
    assert np.all(np.abs(g.means[0] - [1.0, -2.0]) < 3 * se + 0.2)
    assert g.info.converged


def test_two_separated_clusters(rng):
    X = np.vstack([rng.normal(size=(200, 2)), rng.normal(size=(200, 2)) + 10])
    g = fit_em(X, 2)
    order = np.argsort(g.means[:, 0])
    np.testing.assert_allclose(g.weights[order], [0.5, 0.5], atol=0.02)
    np.testing.assert_allclose(g.means[order], [[0, 0], [10, 10]], atol=0.5)
    # hard assignment agrees with the brute-force k-means oracle
    lab_km, _ = lloyd_two_means(X)
    resp_lab = np.argmax(g.component_log_densities(X) + np.log(g.weights), axis=1)
    agree = np.mean(resp_lab == lab_km)
    assert max(agree, 1 - agree) == 1.0


def test_n_equals_k_distinct_points():
    X = np.array([[0.0, 0.0], [5.0, 1.0], [-3.0, 4.0]])
    g = fit_em(X, 3, GmmConfig(reg_floor=1e-6))
    got = g.means[np.lexsort(g.means.T[::-1])]
    want = X[np.lexsort(X.T[::-1])]
    np.testing.assert_allclose(got, want, atol=1e-6)
    for c in g.covariances:
        np.testing.assert_allclose(np.linalg.eigvalsh(c), 1e-6, rtol=1e-6)


def test_degenerate_identical_rows_warn_no_nan():
    X = np.ones((20, 2))
    with pytest.warns(RuntimeWarning):
        g = fit_em(X, 3)
    assert g.n_components == 1
    assert np.all(np.isfinite(g.log_density(X)))


def test_fit_errors():
    with pytest.raises(ValueError):
        fit_em(np.zeros((2, 1)), 3)


def test_log_density_standard_normal():
    g = GmmModel.gaussian([0.0], [[1.0]])
    assert g.log_density(0.0) == pytest.approx(-0.5 * np.log(2 * np.pi), abs=1e-15)
    assert g.log_density(0.0) == pytest.approx(-0.9189, abs=1e-4)


def test_identical_components_collapse(rng):
    single = GmmModel.gaussian([1.0, 2.0], [[1.0, 0.3], [0.3, 2.0]])
    double = GmmModel([0.3, 0.7], [[1.0, 2.0]] * 2, [[[1.0, 0.3], [0.3, 2.0]]] * 2)
    X = rng.normal(size=(50, 2))
    np.testing.assert_allclose(double.log_density(X), single.log_density(X), rtol=1e-13)


def test_tail_is_finite():
    g = GmmModel([0.5, 0.5], [[0.0], [1.0]], [[[1.0]], [[1.0]]])
    v = g.log_density(np.array([[40.0]]))
    assert np.isfinite(v[0]) and v[0] < -700


def test_dimension_mismatch():
    g = GmmModel.gaussian([0.0, 0.0], np.eye(2))
    with pytest.raises(ValueError):
        g.log_density(np.zeros((3, 3)))


def test_sample_determinism_and_mean():
    g = GmmModel([0.5, 0.5], [[-5.0], [5.0]], [[[1.0]], [[1.0]]])
    a, b = g.sample(100_000, 11), g.sample(100_000, 11)
    np.testing.assert_array_equal(a, b)
    # CLT: sd of the mixture is sqrt(26), so the mean's sd is ~0.016
    assert abs(a.mean()) < 0.05


def test_sample_tight_ball():
    g = GmmModel.gaussian([3.0, -1.0], 1e-12 * np.eye(2))
    X = g.sample(1000, 0)
    assert np.max(np.linalg.norm(X - [3.0, -1.0], axis=1)) < 1e-5


def test_density_integrates_to_one():
    g = GmmModel([0.2, 0.5, 0.3], [[-2.0], [0.5], [3.0]], [[[0.3]], [[1.0]], [[2.5]]])
    total, _ = quad(lambda x: np.exp(g.log_density(np.array([x]))[0]), -40, 40, limit=200)
    assert total == pytest.approx(1.0, abs=1e-3)


def test_sample_entropy_consistency():
    g = GmmModel([0.4, 0.6], [[0.0, 0.0], [2.0, 1.0]], [np.eye(2), [[2.0, 0.5], [0.5, 1.0]]])
    X = g.sample(50_000, 3)
    ld = g.log_density(X)
    mc = ld.mean()
    se = ld.std(ddof=1) / np.sqrt(ld.size)
    # independent estimator of -entropy on a grid
    xs = np.linspace(-8, 10, 400)
    ys = np.linspace(-8, 9, 400)
    G = np.stack(np.meshgrid(xs, ys), -1).reshape(-1, 2)
    lp = g.log_density(G)
    grid = np.sum(np.exp(lp) * lp) * (xs[1] - xs[0]) * (ys[1] - ys[0])
    assert abs(mc - grid) < 3 * se


def test_em_monotone_and_weights(rng):
    X = np.vstack([rng.normal(size=(100, 2)), rng.normal(size=(80, 2)) * 0.5 + 3])
    g = fit_em(X, 3, GmmConfig(seed=4))
    assert monotone(g.info.history)
    assert abs(g.weights.sum() - 1) < 1e-12


def test_restarts_independent_of_jobs(rng):
    X = rng.normal(size=(150, 2))
    a = fit_em(X, 2, GmmConfig(seed=9, n_jobs=1))
    b = fit_em(X, 2, GmmConfig(seed=9, n_jobs=3))
    np.testing.assert_array_equal(a.means, b.means)


def test_bic_arithmetic():
    assert bic_value(0.0, 1, 1, 1) == 0.0
    # p = K-1 + K d + K d(d+1)/2
    assert bic_value(-10.0, 100, 2, 2) == pytest.approx(11 * np.log(100) + 20)


def test_bic_prefers_true_order(rng):
    X = rng.normal(size=(2000, 2))
    k, scores = select_k(X, (1, 5), GmmConfig(restarts=2))
    assert k == 1 and scores[1] < scores[5]
    g = fit_em(X, 1)
    assert bic(g, X) == bic(g, X)


def test_json_round_trip(rng):
    g = fit_em(rng.normal(size=(60, 2)), 2)
    back = GmmModel.from_dict(json.loads(json.dumps(g.to_dict())))
    X = rng.normal(size=(10, 2))
    np.testing.assert_array_equal(back.log_density(X), g.log_density(X))
    assert back.info.iterations == g.info.iterations


def test_invalid_models():
    with pytest.raises(ValueError):
        GmmModel([0.5, 0.6], [[0.0], [1.0]], [[[1.0]], [[1.0]]])
    with pytest.raises(ValueError):
        GmmModel.gaussian([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])


@given(st.integers(0, 2**31), st.integers(1, 4), st.integers(1, 3))
def test_em_properties_random(seed, K, d):
    r = np.random.default_rng(seed)
    n = int(r.integers(max(K, 5), 80))
    X = r.normal(size=(n, d)) * r.uniform(0.1, 5, d) + r.normal(size=(1, d)) * 3
    g = fit_em(X, K, GmmConfig(seed=seed, restarts=2, max_iter=60))
    assert monotone(g.info.history)
    assert abs(g.weights.sum() - 1) < 1e-12
    floor = g.info.reg_floor
    for c in g.covariances:
        assert np.allclose(c, c.T, atol=1e-10)
        assert np.linalg.eigvalsh(c).min() >= floor * (1 - 1e-8)
    assert np.all(np.isfinite(g.log_density(X)))
