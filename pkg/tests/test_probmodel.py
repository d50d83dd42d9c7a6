import numpy as np
import pytest
from hypothesis import given, strategies as st

from transferdist.dataset import LabeledDataset
from transferdist.gmm import GmmConfig, GmmModel
from transferdist.probmodel import ClassConditionalModel, Prior, fit
from transferdist.synthetic import gaussian_classes


def two_class(prior=(0.5, 0.5), m0=(0.0, 0.0), m1=(4.0, 0.0), scale=1.0):
    g0 = GmmModel.gaussian(m0, scale * np.eye(2))
    g1 = GmmModel.gaussian(m1, scale * np.eye(2))
    return ClassConditionalModel({0: g0, 1: g1}, Prior(prior))


def test_prior_validation():
    with pytest.raises(ValueError, match="sum to 1"):
        Prior([0.5, 0.6])
    with pytest.raises(ValueError):
        Prior([1.2, -0.2])
    assert Prior([0.1, 0.2, 0.7]).probabilities.sum() == pytest.approx(1, abs=1e-15)


def test_empirical_prior_unbalanced_counts():
    labels = np.r_[np.zeros(789, int), np.ones(1480, int)]
    ds = LabeledDataset(np.zeros((labels.size, 1)), labels)
    p = Prior.empirical(ds)
    np.testing.assert_allclose(p.probabilities, [789 / 2269, 1480 / 2269])
    np.testing.assert_allclose(p.probabilities, [0.348, 0.652], atol=5e-4)
    assert p.source_kind == "empirical"


def test_from_first():
    np.testing.assert_allclose(Prior.from_first(0.9).probabilities, [0.9, 0.1])
    np.testing.assert_allclose(Prior.from_first(0.4, [1, 3]).probabilities, [0.4, 0.15, 0.45])


def test_fit_recovers_class_means():
    ds = gaussian_classes([(0, 0), (6, 6)], [0.2 * np.eye(2)] * 2, [300, 200], seed=1)
    m = fit(ds, Prior.empirical(ds), 1)
    for y, mu in ((0, (0, 0)), (1, (6, 6))):
        rows = ds.features[ds.labels == y]
        np.testing.assert_allclose(m.likelihoods[y].means[0], rows.mean(0), rtol=1e-10)
        np.testing.assert_allclose(m.likelihoods[y].means[0], mu, atol=0.1)


def test_fit_insufficient_rows():
    ds = LabeledDataset(np.arange(5.0)[:, None], [0, 0, 0, 0, 1])
    with pytest.raises(ValueError, match="fewer than K=2"):
        fit(ds, Prior([0.5, 0.5]), 2)
    m = fit(ds, Prior([1.0, 0.0]), 2)
    assert list(m.likelihoods) == [0]


def test_prior_collapse_marginal(rng):
    m = two_class((1.0, 0.0))
    X = rng.normal(size=(20, 2)) * 3
    np.testing.assert_array_equal(m.marginal_log_density(X), m.likelihoods[0].log_density(X))


def test_single_class_marginal(rng):
    g = GmmModel.gaussian([1.0], [[2.0]])
    m = ClassConditionalModel({0: g}, Prior([1.0]))
    x = rng.normal(size=7)
    np.testing.assert_array_equal(m.marginal_log_density(x), g.log_density(x))


def test_symmetric_axis_marginal():
    m = two_class()
    x = np.array([2.0, 0.7])
    assert m.marginal_log_density(x) == pytest.approx(m.likelihoods[0].log_density(x), rel=1e-14)


def test_marginal_direct_recomputation(rng):
    m = ClassConditionalModel(
        {0: GmmModel([0.3, 0.7], [[0.0, 0.0], [1.0, 1.0]], [np.eye(2), 2 * np.eye(2)]),
         1: GmmModel.gaussian([2.0, -1.0], [[1.0, 0.4], [0.4, 1.0]]),
         2: GmmModel.gaussian([-1.0, 2.0], 0.5 * np.eye(2))},
        Prior([0.2, 0.5, 0.3]),
    )
    X = rng.normal(size=(100, 2)) * 2
    direct = sum(m.prior.probabilities[y] * np.exp(m.likelihoods[y].log_density(X)) for y in range(3))
    np.testing.assert_allclose(np.exp(m.marginal_log_density(X)), direct, rtol=1e-12)
    post = m.posterior(X)
    brute = np.stack([m.prior.probabilities[y] * np.exp(m.likelihoods[y].log_density(X)) for y in range(3)], 1)
    brute /= brute.sum(1, keepdims=True)
    np.testing.assert_allclose(post, brute, atol=1e-12)
    np.testing.assert_allclose(post.sum(1), 1, atol=1e-12)


def test_posterior_equal_likelihoods_is_prior():
    g = GmmModel.gaussian([0.0], [[1.0]])
    m = ClassConditionalModel({0: g, 1: g}, Prior([0.9, 0.1]))
    np.testing.assert_allclose(m.posterior(np.array([0.3])), [[0.9, 0.1]], atol=1e-15)


def test_posterior_dominance_and_classify():
    m = two_class(scale=0.1)
    assert m.posterior(np.array([0.0, 0.0]))[0] > 0.999
    assert m.classify(np.array([0.0, 0.0])) == 0
    assert m.classify(np.array([4.0, 0.0])) == 1


def test_classify_ties_go_low():
    g = GmmModel.gaussian([0.0], [[1.0]])
    m = ClassConditionalModel({0: g, 1: g}, Prior([0.5, 0.5]))
    assert m.classify(np.array([[0.0]]))[0] == 0
    m9 = ClassConditionalModel({0: g, 1: g}, Prior([0.1, 0.9]))
    assert m9.classify(np.array([[0.0]]))[0] == 1


def test_underflow_falls_back_to_prior():
    m = two_class((0.7, 0.3), scale=1e-3)
    x = np.array([[1e3, 1e3]])
    assert np.all(m.class_log_densities(x) < -700)
    np.testing.assert_allclose(m.posterior(x), [[0.7, 0.3]])
    assert m.underflow_count == 1


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        two_class().posterior(np.zeros((2, 3)))


def test_mixed_dimensions_rejected():
    with pytest.raises(ValueError):
        ClassConditionalModel({0: GmmModel.gaussian([0.0], [[1.0]]),
                               1: GmmModel.gaussian([0.0, 0.0], np.eye(2))}, Prior([0.5, 0.5]))


def test_model_json_round_trip(tmp_path, rng):
    ds = gaussian_classes([(0, 0), (3, 3)], [np.eye(2)] * 2, [50, 50], seed=2)
    m = fit(ds, Prior.empirical(ds), 2, GmmConfig(restarts=2))
    m.save(tmp_path / "m.json")
    back = ClassConditionalModel.load(tmp_path / "m.json")
    X = rng.normal(size=(10, 2))
    np.testing.assert_array_equal(back.posterior(X), m.posterior(X))


def test_marginal_sampling_matches_prior():
    m = two_class((0.25, 0.75), scale=0.01)
    X = m.sample(20_000, 1)
    frac1 = np.mean(X[:, 0] > 2)
    assert abs(frac1 - 0.75) < 4 * np.sqrt(0.75 * 0.25 / 20_000)


shifts = st.lists(st.floats(-50, 50), min_size=3, max_size=3)
probs = st.lists(st.floats(0.01, 1), min_size=3, max_size=3).map(lambda v: np.array(v) / np.sum(v))


@given(st.lists(st.floats(-800, 5), min_size=3, max_size=3), st.floats(-300, 300), probs)
def test_posterior_argmax_invariant_to_common_shift(ld, c, p):
    m = ClassConditionalModel({y: GmmModel.gaussian([0.0], [[1.0]]) for y in range(3)}, Prior(p))
    ld = np.array([ld])
    a, _ = m.posterior_from_log_densities(ld)
    b, _ = m.posterior_from_log_densities(ld + c)
    if np.max(ld) > -700 and np.max(ld + c) > -700:
        assert np.argmax(a) == np.argmax(b)
        np.testing.assert_allclose(a, b, atol=1e-9)


@given(st.integers(0, 2))
def test_point_mass_prior_gives_indicator(y):
    p = np.zeros(3)
    p[y] = 1
    m = ClassConditionalModel({k: GmmModel.gaussian([float(k)], [[1.0]]) for k in range(3)}, Prior(p))
    post = m.posterior(np.linspace(-10, 10, 41))
    np.testing.assert_array_equal(post, np.tile(p, (41, 1)))


@given(st.floats(0.01, 0.98), st.floats(0.001, 0.5), st.floats(-6, 10))
def test_posterior_monotone_in_prior(p0, dp, x):
    dp = min(dp, 0.99 - p0)
    g0, g1 = GmmModel.gaussian([0.0], [[1.0]]), GmmModel.gaussian([2.0], [[2.0]])
    lo = ClassConditionalModel({0: g0, 1: g1}, Prior([p0, 1 - p0]))
    hi = ClassConditionalModel({0: g0, 1: g1}, Prior([p0 + dp, 1 - p0 - dp]))
    assert hi.posterior(np.array([x]))[0, 0] >= lo.posterior(np.array([x]))[0, 0] - 1e-15


@given(probs, st.floats(-20, 20), st.floats(-20, 20))
def test_marginal_dominates_each_joint(p, x1, x2):
    m = ClassConditionalModel(
        {0: GmmModel.gaussian([0.0, 0.0], np.eye(2)),
         1: GmmModel.gaussian([3.0, 1.0], [[2.0, 0.3], [0.3, 1.0]]),
         2: GmmModel([0.5, 0.5], [[-2.0, 2.0], [1.0, -3.0]], [np.eye(2), 0.5 * np.eye(2)])},
        Prior(p),
    )
    x = np.array([[x1, x2]])
    marg = np.exp(m.marginal_log_density(x))[0]
    for y in range(3):
        joint = p[y] * np.exp(m.likelihoods[y].log_density(x))[0]
        assert marg >= joint * (1 - 1e-12)
