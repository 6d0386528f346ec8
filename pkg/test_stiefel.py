import numpy as np
import pytest

from errors import DegenerateReflectionError, DegenerateRetractionError, InvalidArgumentError
from stiefel import (
    ProjectionMatrix,
    ProjectionParams,
    haar_uniformity_check,
    householder_map,
    householder_matrix,
    householder_reflections,
    householder_vjp,
    n_params,
    qr_retract,
    tangent_project,
)


def test_n_params():
    assert n_params(2, 1) == 2
    assert n_params(5, 2) == 9
    assert n_params(4, 4) == 10


def test_householder_hand_values():
    W = householder_map(ProjectionParams(theta_p=[1.0, 0.0], d=2, m=1)).W
    np.testing.assert_allclose(W, [[1.0], [0.0]], atol=1e-15)
    W = householder_map(ProjectionParams(theta_p=[0.0, 1.0], d=2, m=1)).W
    np.testing.assert_allclose(W, [[0.0], [1.0]], atol=1e-15)


def test_orthonormality_suite():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        d = int(rng.integers(1, 101))
        m = int(rng.integers(1, min(d, 5) + 1))
        W = householder_matrix(rng.standard_normal(n_params(d, m)), d, m)
        assert W.shape == (d, m)
        assert np.max(np.abs(W.T @ W - np.eye(m))) <= 1e-10


def test_deterministic_and_consumes_contiguous_slices():
    rng = np.random.default_rng(4)
    theta = rng.standard_normal(n_params(5, 2))
    np.testing.assert_array_equal(householder_matrix(theta, 5, 2), householder_matrix(theta.copy(), 5, 2))
    blocks = householder_reflections(theta, 5, 2)
    assert [b.shape for b in blocks] == [(5, 5), (4, 4)]
    # m = 1 uses only the first slice: W is v / |v|
    v = theta[:5]
    np.testing.assert_allclose(householder_matrix(v, 5, 1)[:, 0], v / np.linalg.norm(v), atol=1e-12)


def test_params_validation():
    with pytest.raises(ValueError):
        ProjectionParams(theta_p=[1.0, 2.0, 3.0], d=2, m=1)
    with pytest.raises(ValueError):
        ProjectionParams(theta_p=[1.0], d=1, m=2)


def test_zero_slice_is_degenerate():
    with pytest.raises(DegenerateReflectionError):
        householder_matrix(np.zeros(2), 2, 1)


def test_nan_theta_rejected():
    with pytest.raises(InvalidArgumentError):
        householder_matrix(np.array([np.nan, 1.0]), 2, 1)


def test_projection_matrix_rejects_non_orthonormal():
    with pytest.raises(ValueError):
        ProjectionMatrix(W=np.array([[1.0], [1.0]]))


def test_vjp_matches_finite_differences():
    rng = np.random.default_rng(7)
    d, m = 6, 3
    theta = rng.standard_normal(n_params(d, m))
    C = rng.standard_normal((d, m))
    W, grad = householder_vjp(theta, d, m, C)
    np.testing.assert_array_equal(W, householder_matrix(theta, d, m))
    h = 1e-6
    fd = np.empty_like(theta)
    for i in range(theta.shape[0]):
        e = np.zeros_like(theta)
        e[i] = h
        fd[i] = (np.sum(C * householder_matrix(theta + e, d, m)) - np.sum(C * householder_matrix(theta - e, d, m))) / (2 * h)
    np.testing.assert_allclose(grad, fd, rtol=1e-6, atol=1e-8)


def test_haar_mean_of_first_entry_d2():
    report = haar_uniformity_check(10000, 2, 1, seed=0)
    assert report.mean_tolerance == pytest.approx(0.04)
    assert abs(report.first_column_mean[0]) <= 0.04
    assert report.mean_ok


def test_haar_second_moment_d10():
    report = haar_uniformity_check(10000, 10, 1, seed=1)
    assert 0.08 <= report.first_column_sq_mean[0] <= 0.12
    assert report.sq_mean_ok


def test_haar_square_case_is_orthogonal():
    report = haar_uniformity_check(1000, 3, 3, seed=2)
    assert report.abs_det_mean == pytest.approx(1.0, abs=1e-8)


def test_haar_needs_enough_samples():
    with pytest.raises(InvalidArgumentError):
        haar_uniformity_check(999, 2, 1, seed=0)


def test_tangent_project_properties():
    rng = np.random.default_rng(11)
    W = householder_matrix(rng.standard_normal(n_params(5, 2)), 5, 2)
    np.testing.assert_allclose(tangent_project(W, W), 0.0, atol=1e-12)

    G = rng.standard_normal((5, 2))
    xi = tangent_project(W, G)
    np.testing.assert_allclose(W.T @ xi + xi.T @ W, 0.0, atol=1e-10)
    np.testing.assert_allclose(tangent_project(W, xi), xi, atol=1e-12)

    e1 = np.array([[1.0], [0.0]])
    np.testing.assert_allclose(tangent_project(e1, np.array([[0.0], [3.0]])), [[0.0], [3.0]])


def test_tangent_project_rejects_non_orthonormal():
    with pytest.raises(InvalidArgumentError):
        tangent_project(np.array([[2.0], [0.0]]), np.zeros((2, 1)))


def test_qr_retract():
    e1 = np.array([[1.0], [0.0]])
    np.testing.assert_allclose(qr_retract(e1, np.zeros((2, 1))).W, e1, atol=1e-12)
    r = 1.0 / np.sqrt(2.0)
    np.testing.assert_allclose(qr_retract(e1, np.array([[0.0], [1.0]])).W, [[r], [r]], atol=1e-12)

    rng = np.random.default_rng(3)
    W = householder_matrix(rng.standard_normal(n_params(7, 3)), 7, 3)
    out = qr_retract(W, 0.3 * rng.standard_normal((7, 3))).W
    assert np.max(np.abs(out.T @ out - np.eye(3))) <= 1e-10


def test_qr_retract_rank_deficient():
    e1 = np.array([[1.0], [0.0]])
    with pytest.raises(DegenerateRetractionError):
        qr_retract(e1, -e1)
