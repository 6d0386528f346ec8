"""
gp.py - Zero-mean Gaussian-process regression core.

Everything is computed from one Cholesky factor of K + sigma_n^2 I. The factor
is obtained with a small relative jitter that escalates x10 until the
factorization succeeds or the cap in JITTER_CONFIG is hit.
"""

import logging
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular

from config import JITTER_CONFIG
from errors import InvalidArgumentError, NumericalConditioningError
from kernel import GPHyperparams, k_grad_input, k_matrix

logger = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))


def jittered_cholesky(K: np.ndarray) -> Tuple[np.ndarray, float]:
    """Lower Cholesky factor of K (+ jitter * I) and the absolute jitter that was added."""
    if not np.all(np.isfinite(K)):
        raise NumericalConditioningError("covariance matrix has non-finite entries")
    K = 0.5 * (K + K.T)
    scale = float(np.mean(np.diag(K)))
    relative = JITTER_CONFIG["base"]
    eye = np.eye(K.shape[0])
    while True:
        jitter = relative * scale
        try:
            return cholesky(K + jitter * eye, lower=True), jitter
        except LinAlgError:
            relative *= JITTER_CONFIG["growth"]
            if relative > JITTER_CONFIG["max"] * (1.0 + 1e-9):
                raise NumericalConditioningError(
                    f"Cholesky failed with jitter up to {JITTER_CONFIG['max']:.0e} x mean(diag)"
                )
            logger.debug("[GP] Cholesky failed, escalating jitter to %.1e", relative)


class GPPosterior(BaseModel):
    """Reusable factorization of a GP conditioned on training data."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    X_train: np.ndarray
    alpha: np.ndarray
    chol: np.ndarray
    hp: GPHyperparams
    jitter: float = 0.0


class PredictiveDistribution(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    mean: np.ndarray
    variance: np.ndarray

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)


def _check_training(X: np.ndarray, y: np.ndarray, hp: GPHyperparams) -> Tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] < 1:
        raise InvalidArgumentError(f"X must be n x m' with n = len(y) >= 1, got {X.shape} and {y.shape}")
    if X.shape[1] != hp.dim:
        raise InvalidArgumentError(f"X has {X.shape[1]} columns but hp has {hp.dim} lengthscales")
    return X, y


def fit_posterior(X: np.ndarray, y: np.ndarray, hp: GPHyperparams) -> GPPosterior:
    X, y = _check_training(X, y, hp)
    K = k_matrix(X, X, hp) + hp.noise_variance * np.eye(X.shape[0])
    L, jitter = jittered_cholesky(K)
    alpha = cho_solve((L, True), y)
    return GPPosterior(X_train=X, alpha=alpha, chol=L, hp=hp, jitter=jitter)


def log_marginal_likelihood(X: np.ndarray, y: np.ndarray, hp: GPHyperparams) -> float:
    post = fit_posterior(X, y, hp)
    y = np.asarray(y, dtype=float).ravel()
    return float(
        -0.5 * y @ post.alpha - np.sum(np.log(np.diag(post.chol))) - 0.5 * y.shape[0] * LOG_2PI
    )


def _lml_core(Z: np.ndarray, y: np.ndarray, hp: GPHyperparams):
    """Shared pieces: value, K (noise free), and A = alpha alpha^T - (K + s_n^2 I)^-1."""
    Z, y = _check_training(Z, y, hp)
    n = Z.shape[0]
    K = k_matrix(Z, Z, hp)
    L, _ = jittered_cholesky(K + hp.noise_variance * np.eye(n))
    alpha = cho_solve((L, True), y)
    value = float(-0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * LOG_2PI)
    K_inv = cho_solve((L, True), np.eye(n))
    A = np.outer(alpha, alpha) - K_inv
    return value, Z, K, A


def _weighted_sqdist_sums(Z: np.ndarray, M: np.ndarray) -> np.ndarray:
    """For symmetric M, per column k: sum_ij M_ij (Z_ik - Z_jk)^2."""
    row_sums = M.sum(axis=1)
    return 2.0 * ((Z**2).T @ row_sums) - 2.0 * np.sum(Z * (M @ Z), axis=0)


def log_marginal_likelihood_grad(X: np.ndarray, y: np.ndarray, hp: GPHyperparams) -> np.ndarray:
    """Gradient over natural hyperparameters ordered (sigma_f, sigma_n, l_1..l_m)."""
    _, Z, K, A = _lml_core(X, y, hp)
    M = A * K
    d_sigma_f = 0.5 * np.sum(M) / hp.sigma_f
    d_sigma_n = hp.sigma_n * np.trace(A)
    d_ell = 0.5 * _weighted_sqdist_sums(Z, M) / hp.lengthscales**3
    return np.concatenate([[d_sigma_f, d_sigma_n], d_ell])


def log_marginal_likelihood_with_grads(Z: np.ndarray, y: np.ndarray, hp: GPHyperparams):
    """
    Value plus gradients used by the samplers and the MO-AS optimizer.

    Returns (value, dL/dZ, dL/dlog_hp) with log_hp ordered
    (log sigma_n, log sigma_f, log l_1..l_m).
    """
    value, Z, K, A = _lml_core(Z, y, hp)
    M = A * K
    inv_l2 = 1.0 / hp.lengthscales**2
    grad_Z = -(M.sum(axis=1)[:, None] * Z - M @ Z) * inv_l2
    grad_log = np.concatenate(
        [
            [hp.noise_variance * np.trace(A), 0.5 * np.sum(M)],
            0.5 * _weighted_sqdist_sums(Z, M) * inv_l2,
        ]
    )
    return value, grad_Z, grad_log


def posterior_predict(post: GPPosterior, X_star: np.ndarray) -> PredictiveDistribution:
    X_star = np.asarray(X_star, dtype=float)
    if X_star.ndim == 1:
        X_star = X_star.reshape(1, -1)
    if X_star.shape[1] != post.X_train.shape[1]:
        raise InvalidArgumentError(
            f"X_star has {X_star.shape[1]} columns, training inputs have {post.X_train.shape[1]}"
        )
    K_star = k_matrix(X_star, post.X_train, post.hp)
    mean = K_star @ post.alpha
    v = solve_triangular(post.chol, K_star.T, lower=True)
    variance = post.hp.sigma_f - np.sum(v**2, axis=0) + post.hp.noise_variance
    return PredictiveDistribution(mean=mean, variance=np.maximum(variance, 0.0))


def posterior_mean_grad(post: GPPosterior, x_star: np.ndarray) -> np.ndarray:
    return k_grad_input(x_star, post.X_train, post.hp) @ post.alpha


def posterior_mean_grad_batch(post: GPPosterior, X_star: np.ndarray) -> np.ndarray:
    """Row i is the posterior-mean gradient at X_star[i]; vectorised `posterior_mean_grad`."""
    X_star = np.asarray(X_star, dtype=float)
    if X_star.ndim != 2 or X_star.shape[1] != post.X_train.shape[1]:
        raise InvalidArgumentError("X_star must be q x m' with m' matching the training inputs")
    weighted = k_matrix(X_star, post.X_train, post.hp) * post.alpha[None, :]
    return -(weighted.sum(axis=1)[:, None] * X_star - weighted @ post.X_train) / post.hp.lengthscales**2
