"""
BAS model: densities, gradients, marginal prediction and persistence.
"""

import numpy as np
import pytest

from errors import DataError, InvalidArgumentError
from gp import fit_posterior, log_marginal_likelihood, posterior_predict
from kernel import GPHyperparams
from model import (
    BASLogDensity,
    BASParams,
    GPLogDensity,
    MarginalPrediction,
    PosteriorSamples,
    hyperparameter_order,
    load_posterior,
    log_posterior,
    log_posterior_grad,
    log_prior,
    posterior_from_dict,
    posterior_projections,
    posterior_to_dict,
    predict_marginal,
    save_posterior,
    train_bas,
)
from sampler import SamplerConfig
from stiefel import householder_matrix, n_params
from transform import Standardization, fit_standardization


def _data(n, d, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, d))
    w = np.ones(d) / np.sqrt(d)
    y = (X @ w) ** 2 + 0.3 * (X @ w) + 0.05 * rng.standard_normal(n)
    return X, y - y.mean()


def _samples(vectors, d, m, kind="bas"):
    chains = np.asarray(vectors, dtype=float)[None, :, :]
    return PosteriorSamples(kind=kind, chains=chains, d=d, m=m, standardization=Standardization.identity(d))


def test_hyperparameter_order():
    assert hyperparameter_order(2) == ["log_sigma_n", "log_sigma_f", "log_l1", "log_l2"]


def test_log_prior_at_origin():
    p = BASParams.from_vector(np.zeros(5), d=2, m=1)
    assert log_prior(p) == pytest.approx(-4.594693, abs=1e-6)


def test_params_vector_round_trip_and_length_check():
    v = np.arange(n_params(4, 2) + 4, dtype=float)
    p = BASParams.from_vector(v, 4, 2)
    np.testing.assert_array_equal(p.to_vector(), v)
    assert p.dim == v.shape[0]
    with pytest.raises(InvalidArgumentError):
        BASParams.from_vector(v[:-1], 4, 2)


def test_log_posterior_reduces_to_first_column_gp():
    X, y = _data(15, 2)
    log_hp = np.array([-1.0, 0.3, 0.2])
    p = BASParams.from_vector(np.concatenate([[1.0, 0.0], log_hp]), d=2, m=1)
    expected = log_prior(p) + log_marginal_likelihood(X[:, :1], y, GPHyperparams.from_log(log_hp))
    assert log_posterior(p, X, y) == pytest.approx(expected, rel=1e-12)


def test_log_posterior_depends_on_theta_only_through_w():
    X, y = _data(12, 3)
    log_hp = np.array([-0.5, 0.1, 0.4])
    a = BASParams.from_vector(np.concatenate([[1.0, 2.0, -1.0], log_hp]), 3, 1)
    b = BASParams.from_vector(np.concatenate([[2.0, 4.0, -2.0], log_hp]), 3, 1)
    np.testing.assert_array_equal(householder_matrix([1.0, 2.0, -1.0], 3, 1), householder_matrix([2.0, 4.0, -2.0], 3, 1))
    assert log_posterior(a, X, y) - log_prior(a) == pytest.approx(log_posterior(b, X, y) - log_prior(b), rel=1e-13)


def test_value_and_grad_agree_with_log_posterior():
    X, y = _data(20, 4, seed=1)
    target = BASLogDensity(X, y, 4, 2)
    v = np.random.default_rng(2).standard_normal(target.dim)
    assert target(v) == pytest.approx(log_posterior(BASParams.from_vector(v, 4, 2), X, y), rel=1e-12)


@pytest.mark.parametrize("d,m", [(5, 1), (8, 2)])
def test_gradient_matches_central_differences(d, m):
    X, y = _data(30, d, seed=d)
    target = BASLogDensity(X, y, d, m)
    rng = np.random.default_rng(100 + d)
    h = 1e-5
    for _ in range(20):
        v = rng.standard_normal(target.dim)
        _, grad = target.value_and_grad(v)
        fd = np.array([(target(v + h * e) - target(v - h * e)) / (2 * h) for e in np.eye(target.dim)])
        assert np.linalg.norm(grad - fd) <= 1e-5 * max(np.linalg.norm(fd), 1.0)


def test_gradient_is_prior_only_for_insensitive_coordinate():
    # d=2, m=1 with theta=(1, 0): W=(1, 0) and the second coordinate's sensitivity
    # vanishes when the data gradient is along the first axis only
    X = np.column_stack([np.linspace(-1, 1, 9), np.zeros(9)])
    y = np.sin(2 * X[:, 0])
    p = BASParams.from_vector(np.array([1.0, 0.0, -1.0, 0.0, 0.0]), 2, 1)
    grad = log_posterior_grad(p, X, y)
    assert grad[1] == pytest.approx(-0.0, abs=1e-10)


def test_gp_log_density_gradient():
    X, y = _data(15, 3, seed=4)
    target = GPLogDensity(X, y)
    assert target.dim == 5
    v = np.array([-1.0, 0.2, 0.1, -0.3, 0.5])
    _, grad = target.value_and_grad(v)
    h = 1e-6
    fd = np.array([(target(v + h * e) - target(v - h * e)) / (2 * h) for e in np.eye(5)])
    np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-6)


def test_log_posterior_ignores_row_order():
    X, y = _data(18, 4, seed=7)
    rng = np.random.default_rng(7)
    p = BASParams.from_vector(rng.standard_normal(n_params(4, 2) + 4), 4, 2)
    perm = rng.permutation(18)
    assert log_posterior(p, X[perm], y[perm]) == pytest.approx(log_posterior(p, X, y), rel=1e-10)


def test_posterior_samples_validates_width():
    with pytest.raises(ValueError):
        _samples(np.zeros((3, 4)), d=2, m=1)
    s = _samples(np.zeros((3, 5)), d=2, m=1)
    assert (s.n_chains, s.n_draws, s.k, s.param_dim) == (1, 3, 2, 5)
    assert s.parameter_names()[:3] == ["theta_p0", "theta_p1", "log_sigma_n"]


def test_collapsed_posterior_predicts_the_conditional_gaussian():
    X, y = _data(25, 3, seed=5)
    v = np.concatenate([[0.3, 1.0, -0.2], [-2.0, 0.0, 0.0]])
    samples = _samples(np.tile(v, (50, 1)), d=3, m=1)
    X_star = np.random.default_rng(6).uniform(-1, 1, size=(6, 3))
    pred = predict_marginal(samples, X_star, X, y, draws_per_sample=10, seed=0)

    W, hp = samples.draw_components(v)
    exact = posterior_predict(fit_posterior(X @ W, y, hp), X_star @ W)
    np.testing.assert_allclose(pred.mean, exact.mean, atol=1e-12)
    np.testing.assert_allclose(pred.std, exact.std, rtol=1e-8)
    assert pred.pool_size == 500
    assert np.all(np.abs(pred.median - exact.mean) <= 3 * exact.std * 1.253 / np.sqrt(500) + 1e-12)
    assert np.all(pred.q05 < pred.median) and np.all(pred.median < pred.q95)


def test_spread_posterior_inflates_predictive_std():
    X, y = _data(25, 2, seed=7)
    draws = np.array([[1.0, 0.2, -2.0, 0.0, 0.0], [0.1, 1.0, -2.0, 0.0, 0.0]])
    samples = _samples(draws, d=2, m=1)
    X_star = np.array([[0.5, -0.5], [0.9, 0.1]])
    pred = predict_marginal(samples, X_star, X, y, draws_per_sample=5)
    per_component = np.sqrt(pred.component_vars)
    assert np.all(pred.std >= per_component.min(axis=0) - 1e-12)


def test_symmetric_mixture_log_density():
    a, s = 1.5, 0.5
    pred = MarginalPrediction(
        component_means=np.array([[-a], [a]]),
        component_vars=np.array([[s**2], [s**2]]),
        median=np.array([0.0]),
        mean=np.array([0.0]),
        std=np.array([np.sqrt(a**2 + s**2)]),
        q05=np.array([-a - 1.645 * s]),
        q95=np.array([a + 1.645 * s]),
        pool_size=2,
    )
    log_at_a = pred.log_density(np.array([a]), gamma=1)[0]
    dens = 0.5 * (np.exp(-0.5 * (2 * a / s) ** 2) + 1.0) / (s * np.sqrt(2 * np.pi))
    assert log_at_a == pytest.approx(np.log(dens), rel=1e-12)
    # gamma scales only the Gaussian constant
    assert pred.log_density(np.array([a]), gamma=3)[0] - log_at_a == pytest.approx(-np.log(2 * np.pi))


def test_predict_marginal_median_converges():
    X, y = _data(20, 2, seed=8)
    rng = np.random.default_rng(9)
    draws = np.column_stack([rng.normal(1.0, 0.1, 40), rng.normal(0.5, 0.1, 40), np.full(40, -2.0), np.zeros(40), np.zeros(40)])
    samples = _samples(draws, d=2, m=1)
    X_star = np.array([[0.2, 0.3]])
    small = predict_marginal(samples, X_star, X, y, draws_per_sample=50, seed=1)
    large = predict_marginal(samples, X_star, X, y, draws_per_sample=100, seed=1)
    assert abs(small.median[0] - large.median[0]) < 3 * large.std[0] / np.sqrt(large.pool_size) * 4


def test_predict_marginal_input_checks():
    X, y = _data(10, 2)
    samples = _samples(np.zeros((2, 5)) + [1.0, 0.0, 0.0, 0.0, 0.0], d=2, m=1)
    with pytest.raises(InvalidArgumentError):
        predict_marginal(samples, X[:2], X, y, draws_per_sample=0)
    with pytest.raises(DataError):
        predict_marginal(samples, np.zeros((2, 3)), X, y)


def test_destandardize_round_trip():
    X, y = _data(30, 2, seed=3)
    std = fit_standardization(X, 5.0 + 3.0 * y)
    samples = _samples(np.tile([1.0, 0.3, -2.0, 0.0, 0.0], (4, 1)), d=2, m=1)
    pred = predict_marginal(samples, X[:5], X, y, draws_per_sample=3)
    back = pred.destandardize(std)
    np.testing.assert_allclose((back.mean - std.y_mean) / std.y_scale, pred.mean, atol=1e-12)
    np.testing.assert_allclose(back.std / std.y_scale, pred.std, atol=1e-12)
    # original-units log density differs by the Jacobian log(y_scale)
    actual = pred.mean + 0.1
    np.testing.assert_allclose(
        back.log_density(actual * std.y_scale + std.y_mean, 1), pred.log_density(actual, 1) - np.log(std.y_scale)
    )


def test_train_bas_small_run_and_persistence(tmp_path):
    X, y = _data(15, 3, seed=10)
    cfg = SamplerConfig(chains=2, draws=20, warmup=20, seed=3, enable_parallel_chains=False)
    samples = train_bas(X, y, 1, cfg)
    assert samples.chains.shape == (2, 20, n_params(3, 1) + 3)
    assert np.all(np.isfinite(samples.chains))
    assert len(samples.diagnostics.split_rhat) == samples.param_dim
    Ws = posterior_projections(samples)
    assert len(Ws) == 40 and Ws[0].W.shape == (3, 1)

    path = tmp_path / "posterior.json"
    save_posterior(samples, path)
    loaded = load_posterior(path)
    np.testing.assert_array_equal(loaded.chains, samples.chains)
    assert loaded.diagnostics.acceptance_rate == samples.diagnostics.acceptance_rate
    payload = posterior_to_dict(samples)
    assert payload["meta"]["hyperparameter_order"] == hyperparameter_order(1)


def test_train_bas_rejects_bad_m():
    X, y = _data(10, 2)
    with pytest.raises(InvalidArgumentError):
        train_bas(X, y, 3, SamplerConfig(chains=1, draws=1, warmup=0))


def test_posterior_from_dict_reports_missing_fields():
    with pytest.raises(DataError):
        posterior_from_dict({"meta": {"d": 2}})
