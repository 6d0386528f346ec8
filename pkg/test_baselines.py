"""
MO-AS and B-GP baselines plus gradient-covariance subspace extraction.
"""

import numpy as np
import pytest

from baselines import (
    _RECOVERABLE,
    Z_95,
    _evaluate,
    _line_search,
    _with_point,
    bgp_estimate_subspace,
    bgp_predict,
    bgp_train,
    eigendecompose,
    gradient_covariance,
    load_moas,
    moas_predict,
    moas_train,
    reference_subspace_from_gradients,
    save_moas,
    thinned_indices,
)
from config import MOAS_CONFIG
from data import generate_quadratic, quadratic_gradient
from errors import DataError, InvalidArgumentError
from metrics import mfsa, principal_angles
from model import PosteriorSamples
from sampler import SamplerConfig
from stiefel import ProjectionMatrix
from transform import Standardization


def _ridge(n, d, seed, noise=0.0):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(d)
    w /= np.linalg.norm(w)
    X = rng.uniform(-1, 1, size=(n, d))
    y = (X @ w) ** 2 + noise * rng.standard_normal(n)
    y = (y - y.mean()) / y.std()
    return X, y, w


def test_hand_covariance_eigenpair():
    cov = gradient_covariance(np.tile([3.0, 4.0], (5, 1)))
    np.testing.assert_allclose(cov.C, [[9.0, 12.0], [12.0, 16.0]], atol=1e-12)
    assert cov.eigenvalues[0] == pytest.approx(25.0, abs=1e-12)
    assert cov.eigenvalues[1] == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(cov.eigenvectors[:, 0], [0.6, 0.8], atol=1e-12)


def test_all_gradients_along_first_axis():
    cov, W = reference_subspace_from_gradients(np.tile([1.0, 0.0, 0.0], (4, 1)), 1)
    np.testing.assert_allclose(cov.eigenvalues, [1.0, 0.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(W.W[:, 0], [1.0, 0.0, 0.0], atol=1e-12)


def test_ties_keep_index_order_and_positive_pivot():
    cov = gradient_covariance(np.array([[1.0, 0.0], [0.0, 1.0]]))
    np.testing.assert_allclose(cov.eigenvalues, [0.5, 0.5])
    for j in range(2):
        col = cov.eigenvectors[:, j]
        assert col[np.argmax(np.abs(col))] > 0


def test_rotating_gradients_rotates_subspace():
    rng = np.random.default_rng(0)
    G = rng.standard_normal((50, 4)) * [3.0, 1.0, 0.5, 0.1]
    Q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    base = gradient_covariance(G)
    rotated = gradient_covariance(G @ Q.T)
    np.testing.assert_allclose(rotated.eigenvalues, base.eigenvalues, rtol=1e-10)
    angle = principal_angles(Q @ base.leading(2).W, rotated.leading(2)).first
    assert angle == pytest.approx(0.0, abs=1e-7)


def test_gradient_covariance_rejects_nan():
    with pytest.raises(DataError):
        gradient_covariance(np.array([[1.0, np.nan]]))


def test_eigendecompose_symmetrizes():
    out = eigendecompose(np.array([[2.0, 1.0], [0.0, 2.0]]))
    np.testing.assert_allclose(out.C, out.C.T)


def test_generator_gradients_recover_construction_subspace():
    ds, spec = generate_quadratic(d=8, m=2, n=400, seed=3, noise_std=0.0)
    _, W = reference_subspace_from_gradients(ds.gradients, 2)
    assert principal_angles(W, spec.W).first <= 1e-6
    np.testing.assert_allclose(quadratic_gradient(spec, ds.X), ds.gradients)


def test_thinned_indices():
    np.testing.assert_array_equal(thinned_indices(5, 10), np.arange(5))
    idx = thinned_indices(1000, 100)
    assert len(idx) == 100 and idx[0] == 0 and idx[-1] == 999


def test_moas_iterates_stay_orthonormal_and_trace_is_monotone():
    X, y, _ = _ridge(40, 3, seed=1, noise=0.01)
    model = moas_train(X, y, 1, restarts=3, seed=0, max_iterations=50, enable_parallel=False)
    W = model.W.W
    assert np.max(np.abs(W.T @ W - np.eye(1))) <= 1e-8
    assert all(b >= a for a, b in zip(model.trace, model.trace[1:]))
    assert model.best_loglik == pytest.approx(model.trace[-1])
    assert model.gradient_norm <= 1e-4 or model.hit_max_iterations or model.iterations < 50


@pytest.mark.slow
def test_moas_recovers_ridge_direction():
    X, y, w = _ridge(60, 3, seed=2, noise=0.01)
    model = moas_train(X, y, 1, restarts=8, seed=0, max_iterations=300, enable_parallel=False)
    assert np.degrees(principal_angles(model.W, w.reshape(-1, 1)).first) <= 5.0


def test_moas_parallel_matches_sequential():
    X, y, _ = _ridge(25, 3, seed=4, noise=0.05)
    a = moas_train(X, y, 1, restarts=4, seed=5, max_iterations=20, enable_parallel=True)
    b = moas_train(X, y, 1, restarts=4, seed=5, max_iterations=20, enable_parallel=False)
    np.testing.assert_array_equal(a.W.W, b.W.W)
    assert a.best_restart == b.best_restart


def test_overflowing_noise_scale_is_recoverable():
    X, y, _ = _ridge(12, 3, seed=3)
    W = np.array([[1.0], [0.0], [0.0]])
    with pytest.raises(_RECOVERABLE):
        _evaluate(X, y, W, np.array([400.0, 0.0, 0.0]))


def test_line_search_backs_off_from_overflowing_step():
    rng = np.random.default_rng(9)
    X = rng.uniform(-1, 1, size=(20, 3))
    y = rng.standard_normal(20)
    W = np.array([[1.0], [0.0], [0.0]])
    log_hp = np.array([-5.0, 0.0, 0.0])
    value, _, grad_log = _evaluate(X, y, W, log_hp)
    assert grad_log[0] > 0.0  # more noise fits pure noise better
    direction = np.array([1.0, 0.0, 0.0])
    result = _line_search(
        lambda t: _with_point(X, y, W, log_hp + t * direction), 405.0, grad_log[0], value, MOAS_CONFIG
    )
    assert result is not None
    step, trial = result
    assert step < 405.0 and trial[0] >= value
    assert np.isfinite(trial[0])


def test_moas_argument_checks():
    X, y, _ = _ridge(10, 2, seed=0)
    with pytest.raises(InvalidArgumentError):
        moas_train(X, y, 3, restarts=1)
    with pytest.raises(InvalidArgumentError):
        moas_train(X, y, 1, restarts=0)


def test_moas_predict_and_persistence(tmp_path):
    X, y, _ = _ridge(30, 3, seed=6, noise=0.05)
    model = moas_train(X, y, 1, restarts=2, seed=1, max_iterations=30, enable_parallel=False)
    pred = moas_predict(model, X, y, X[:5])
    assert pred.component_means.shape == (1, 5)
    np.testing.assert_allclose(pred.median, pred.mean)
    np.testing.assert_allclose(pred.q95 - pred.mean, Z_95 * pred.std)

    path = tmp_path / "moas.json"
    save_moas(model, path)
    loaded = load_moas(path)
    np.testing.assert_array_equal(loaded.W.W, model.W.W)
    np.testing.assert_array_equal(loaded.hp.lengthscales, model.hp.lengthscales)
    assert loaded.best_restart == model.best_restart


def test_bgp_one_dimensional_has_three_parameters():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, size=(15, 1))
    y = np.sin(3 * X[:, 0])
    samples = bgp_train(X, y - y.mean(), SamplerConfig(chains=1, draws=10, warmup=10, seed=0))
    assert samples.kind == "bgp"
    assert samples.chains.shape == (1, 10, 3)
    assert samples.parameter_names() == ["log_sigma_n", "log_sigma_f", "log_l1"]


@pytest.mark.slow
def test_bgp_noise_concentrates_below_data_scale():
    rng = np.random.default_rng(1)
    X = rng.uniform(-1, 1, size=(40, 2))
    y = np.sin(2 * X[:, 0]) + X[:, 1] ** 2
    y = (y - y.mean()) / y.std()
    samples = bgp_train(X, y, SamplerConfig(chains=2, draws=200, warmup=200, seed=0))
    log_sigma_n = samples.flat_draws()[:, 0]
    assert np.median(log_sigma_n) < np.log(y.std())


def _bgp_samples(vectors, d):
    return PosteriorSamples(
        kind="bgp", chains=np.asarray(vectors, dtype=float)[None], d=d, m=1, standardization=Standardization.identity(d)
    )


def test_bgp_subspace_of_zero_response_is_zero():
    X = np.random.default_rng(2).uniform(-1, 1, size=(10, 2))
    samples = _bgp_samples(np.zeros((3, 4)), 2)
    out = bgp_estimate_subspace(samples, X, np.zeros(10), n_grad=50, seed=0, enable_parallel=False)
    assert len(out.projections) == 3
    for cov in out.covariances:
        np.testing.assert_allclose(cov.C, 0.0, atol=1e-14)
        np.testing.assert_allclose(cov.eigenvalues, 0.0, atol=1e-14)


def test_bgp_subspace_recovers_ridge_and_is_psd():
    rng = np.random.default_rng(3)
    w = np.array([0.6, 0.8, 0.0])
    X = rng.uniform(-1, 1, size=(100, 3))
    y = np.sin(X @ w)
    samples = _bgp_samples(np.tile([-4.0, 0.0, 0.0, 0.0, 3.0], (4, 1)), 3)
    out = bgp_estimate_subspace(samples, X, y, n_grad=200, seed=1, thin_draws=2)
    assert out.draw_indices == [0, 3]
    for cov in out.covariances:
        np.testing.assert_allclose(cov.C, cov.C.T)
        assert cov.eigenvalues.min() >= -1e-10
    assert np.degrees(mfsa(out.projections, ProjectionMatrix(W=w.reshape(-1, 1)))) <= 5.0


def test_bgp_subspace_needs_bgp_posterior():
    bas = PosteriorSamples(kind="bas", chains=np.zeros((1, 1, 5)), d=2, m=1, standardization=Standardization.identity(2))
    with pytest.raises(InvalidArgumentError):
        bgp_estimate_subspace(bas, np.zeros((3, 2)), np.zeros(3))


def test_bgp_predict_matches_marginal_machinery():
    rng = np.random.default_rng(4)
    X = rng.uniform(-1, 1, size=(20, 2))
    y = X[:, 0] - X[:, 1]
    samples = _bgp_samples(np.tile([-3.0, 0.0, 0.5, 0.5], (3, 1)), 2)
    pred = bgp_predict(samples, X, y, X[:4], draws_per_sample=4, seed=0)
    np.testing.assert_allclose(pred.mean, y[:4], atol=0.1)
