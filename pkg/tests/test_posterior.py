import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal
from scipy import integrate

from selectlab.model import ConfigError, Dgp, IndexMap, InputError, LinkFunction
from selectlab.posterior import (
    LOG_FLOOR, ParamGrid, bayes_update, bayes_update_batch, concentration_metric, normal_prior_on_grid,
    point_mass_grid, posterior_fraud_moments, posterior_mean, summarize,
)

from conftest import make_dgp_1d, make_dgp_2d


def _logistic(z):
    return 1.0 / (1.0 + math.exp(-z))


# oracles ---------------------------------------------------------------------

def test_cubic_prior_fraud_moments_match_adaptive_quadrature():
    s = math.sqrt(0.75)
    lo, hi = 2 - 6 * s, 2 + 6 * s
    u = 0.5**2 + 5 * 0.5**3
    pdf = lambda t: math.exp(-0.5 * (t - 2) ** 2 / 0.75)
    q = lambda f: integrate.quad(f, lo, hi, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
    z = q(pdf)
    m = q(lambda t: _logistic(u * t) * pdf(t)) / z
    v = q(lambda t: _logistic(u * t) ** 2 * pdf(t)) / z - m * m
    gm, gv = posterior_fraud_moments(normal_prior_on_grid([2.0], [0.75]), make_dgp_1d(), 0.5)
    assert gm == pytest.approx(m, abs=1e-10)
    assert gv == pytest.approx(v, abs=1e-10)


def test_square_update_matches_dense_quadrature(square_prior):
    s = math.sqrt(0.75)
    a = np.linspace(2 - 6 * s, 2 + 6 * s, 1001)
    b = np.linspace(1 - 6 * s, 1 + 6 * s, 1001)
    t1, t2 = np.meshgrid(a, b, indexing="ij")
    d = np.exp(-0.5 * ((t1 - 2) ** 2 + (t2 - 1) ** 2) / 0.75) / (1 + np.exp(-(t1 + t2)))
    z = np.trapezoid(np.trapezoid(d, b, axis=1), a)
    oracle = [np.trapezoid(np.trapezoid(d * t, b, axis=1), a) / z for t in (t1, t2)]
    post = posterior_mean(bayes_update(square_prior, make_dgp_2d(), [1.0, 1.0], 1))
    assert_allclose(post, oracle, atol=1e-7)
    assert np.all(post > [2.0, 1.0])


def test_concentration_of_prior_has_closed_form(square_prior):
    # E exp(-(t - r)^2) for t ~ N(m, s2) is (1 + 2 s2)^(-1/2) exp(-(m - r)^2 / (1 + 2 s2))
    oracle = (1 / math.sqrt(2.5)) * math.exp(-1 / 2.5) * (1 / math.sqrt(2.5))
    assert concentration_metric(square_prior, [1.0, 1.0]) == pytest.approx(oracle, abs=1e-8)


def test_concentration_at_point_masses():
    axes = (np.linspace(-2, 2, 5), np.linspace(-2, 2, 5))
    assert concentration_metric(point_mass_grid(axes, (2, 2)), [0.0, 0.0]) == pytest.approx(1.0, abs=1e-15)
    assert concentration_metric(point_mass_grid(axes, (3, 2)), [0.0, 0.0]) == pytest.approx(math.exp(-1), abs=1e-15)


def test_default_prior_grid():
    g = normal_prior_on_grid((2.0, 1.0), (0.75, 0.75))
    assert g.shape == (201, 201)
    assert g.mass() == pytest.approx(1.0, abs=1e-10)
    mode = np.unravel_index(np.argmax(g.density), g.shape)
    assert_allclose([g.axes[0][mode[0]], g.axes[1][mode[1]]], [2.0, 1.0], atol=1e-12)
    assert_allclose(summarize(g).mean, [2.0, 1.0], atol=1e-3)


def test_one_dimensional_prior_moments():
    g = normal_prior_on_grid([2.0], [0.75])
    assert posterior_mean(g)[0] == pytest.approx(2.0, abs=1e-6)
    g = normal_prior_on_grid([0.0], [1.0], bounds=[(-6, 6)], resolution=201)
    assert summarize(g).covariance[0, 0] == pytest.approx(1.0, abs=1e-4)


def test_triangular_density_mean_is_zero():
    axis = np.linspace(-1, 1, 401)
    g = ParamGrid((axis,), 1.0 - np.abs(axis))
    assert summarize(g).mean[0] == pytest.approx(0.0, abs=1e-9)


def test_mixture_mean_matches_closed_form():
    a = np.linspace(-8, 10, 721)
    t1, t2 = np.meshgrid(a, a, indexing="ij")
    comp = lambda m1, m2, s: np.exp(-0.5 * ((t1 - m1) ** 2 + (t2 - m2) ** 2) / s**2) / s**2
    d = 0.3 * comp(-1.0, 2.0, 0.8) + 0.7 * comp(3.0, 0.5, 1.2)
    mean = summarize(ParamGrid((a, a), d)).mean
    assert_allclose(mean, [0.3 * -1 + 0.7 * 3, 0.3 * 2 + 0.7 * 0.5], atol=1e-9)


def test_zero_index_claim_leaves_posterior_flat():
    axis = np.linspace(-1, 1, 101)
    dgp = Dgp(LinkFunction(), IndexMap("linear", 1), [0.5], [-1.0], [1.0])
    flat = ParamGrid((axis,), np.ones(101))
    post = bayes_update(flat, dgp, [0.0], 1)
    assert_allclose(post.density, flat.density, rtol=1e-14)


def test_point_mass_fraud_moments():
    axes = (np.linspace(-3, 3, 7),)
    g = point_mass_grid(axes, (1,))  # theta = -2
    m, v = posterior_fraud_moments(g, make_dgp_1d(), 0.4)
    assert m == pytest.approx(_logistic((0.16 + 5 * 0.064) * -2.0), abs=1e-15)
    assert v == 0.0


def test_fraud_variance_vanishes_at_zero_index(square_prior):
    m, v = posterior_fraud_moments(normal_prior_on_grid([2.0], [0.75]), make_dgp_1d(), 0.0)
    assert m == 0.5 and v == 0.0
    m, v = posterior_fraud_moments(square_prior, make_dgp_2d(), [0.0, 0.0])
    assert m == 0.5 and v == 0.0


# Bayes rule invariants ---------------------------------------------------------

def test_sequential_equals_batch_for_random_interleavings(square_prior):
    dgp = make_dgp_2d()
    rng = np.random.default_rng(2024)
    xs = rng.random((50, 2))
    ys = (rng.random(50) < 0.7).astype(int)
    for _ in range(3):
        order = rng.permutation(50)
        g = square_prior
        for i in order:
            g = bayes_update(g, dgp, xs[i], int(ys[i]))
        batch = bayes_update_batch(square_prior, dgp, xs, ys)
        assert np.max(np.abs(g.density - batch.density)) < 1e-10


def test_updates_preserve_normalization(square_prior):
    dgp = make_dgp_2d()
    rng = np.random.default_rng(5)
    g = square_prior
    for _ in range(40):
        g = bayes_update(g, dgp, rng.random(2), int(rng.random() < 0.5))
        assert g.mass() == pytest.approx(1.0, abs=1e-10)


def test_bayes_update_does_not_mutate_input(square_prior):
    before = square_prior.density.copy()
    bayes_update(square_prior, make_dgp_2d(), [1.0, 1.0], 0)
    assert_array_equal(square_prior.density, before)


@settings(max_examples=30, deadline=None)
@given(st.floats(-500, 500))
def test_mean_invariant_to_log_weight_shift(c):
    g = normal_prior_on_grid((0.5, -0.3), (0.4, 0.9), resolution=41)
    g = bayes_update(g, make_dgp_2d(), [0.3, 0.8], 1)
    shifted = ParamGrid.from_log_weights(g.axes, g.log_weights + c)
    assert_allclose(posterior_mean(shifted), posterior_mean(g), atol=1e-10)


def test_log_weights_are_finite_and_floored():
    axis = np.linspace(-1, 1, 5)
    g = ParamGrid((axis,), [0.0, 1.0, 2.0, 1.0, 0.0])
    assert np.all(np.isfinite(g.log_weights))
    assert g.log_weights[0] == LOG_FLOOR


def test_resolution_refinement_converges():
    # a peaked posterior is under-resolved at 101 nodes, so each refinement must help less
    dgp = make_dgp_2d()
    rng = np.random.default_rng(17)
    xs = rng.random((300, 2))
    ys = (rng.random(300) < 1 / (1 + np.exp(-xs.sum(axis=1)))).astype(int)
    means = []
    for res in (101, 201, 401):
        prior = normal_prior_on_grid((2.0, 1.0), (0.75, 0.75), resolution=res)
        means.append(posterior_mean(bayes_update_batch(prior, dgp, xs, ys)))
    d1 = np.linalg.norm(means[1] - means[0])
    d2 = np.linalg.norm(means[2] - means[1])
    assert d2 < d1


def test_summary_invariants(square_prior):
    g = bayes_update(square_prior, make_dgp_2d(), [0.2, 0.9], 0)
    s = summarize(g)
    assert_allclose(s.covariance, s.covariance.T, atol=0)
    assert np.all(np.diag(s.covariance) >= 0)
    assert np.all((s.mean >= g.bounds[:, 0]) & (s.mean <= g.bounds[:, 1]))
    assert np.isfinite(s.entropy)


# errors ------------------------------------------------------------------------

def test_non_positive_definite_prior_rejected():
    with pytest.raises(ConfigError):
        normal_prior_on_grid((0.0, 0.0), np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ConfigError):
        normal_prior_on_grid((0.0,), (1.0,), resolution=2)


def test_outcome_must_be_binary(square_prior):
    with pytest.raises(InputError):
        bayes_update(square_prior, make_dgp_2d(), [0.5, 0.5], 2)


def test_grid_axes_validated():
    with pytest.raises(ConfigError):
        ParamGrid((np.array([0.0, 1.0]),), np.ones(2))
    with pytest.raises(ConfigError):
        ParamGrid((np.array([0.0, 2.0, 1.0]),), np.ones(3))
