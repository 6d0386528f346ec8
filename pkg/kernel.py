"""
kernel.py - ARD squared-exponential kernel and its derivatives.

    k(a, b) = sigma_f * prod_i exp(-(a_i - b_i)^2 / (2 l_i^2))

sigma_f is the signal variance and multiplies the kernel linearly. Observation
noise never enters here except through `k_grad_hyper`'s last entry, which is
the derivative of K + sigma_n^2 I.
"""

from typing import List

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy.spatial.distance import cdist

from errors import InvalidArgumentError, NumericalConditioningError


class GPHyperparams(BaseModel):
    """Signal variance, noise standard deviation and one lengthscale per input dimension."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    sigma_f: float
    sigma_n: float
    lengthscales: np.ndarray

    @field_validator("lengthscales", mode="before")
    @classmethod
    def _as_vector(cls, value):
        return np.atleast_1d(np.asarray(value, dtype=float))

    @model_validator(mode="after")
    def _check_positive(self):
        if not (self.sigma_f > 0 and self.sigma_n > 0 and np.all(self.lengthscales > 0)):
            raise ValueError("sigma_f, sigma_n and every lengthscale must be strictly positive")
        if not (np.isfinite(self.sigma_f) and np.isfinite(self.sigma_n) and np.all(np.isfinite(self.lengthscales))):
            raise ValueError("hyperparameters must be finite")
        return self

    @property
    def dim(self) -> int:
        return int(self.lengthscales.shape[0])

    @classmethod
    def from_log(cls, log_hp: np.ndarray) -> "GPHyperparams":
        """Build from sampling coordinates ordered (log sigma_n, log sigma_f, log l_1..l_m)."""
        log_hp = np.asarray(log_hp, dtype=float)
        return cls(sigma_n=float(np.exp(log_hp[0])), sigma_f=float(np.exp(log_hp[1])), lengthscales=np.exp(log_hp[2:]))

    @property
    def noise_variance(self) -> float:
        """sigma_n^2; raises NumericalConditioningError instead of overflowing."""
        with np.errstate(over="ignore"):
            value = float(np.square(np.float64(self.sigma_n)))
        if not np.isfinite(value):
            raise NumericalConditioningError(f"noise variance overflows (sigma_n = {self.sigma_n:.3g})")
        return value

    def to_log(self) -> np.ndarray:
        return np.concatenate([[np.log(self.sigma_n), np.log(self.sigma_f)], np.log(self.lengthscales)])


def _as_design(A: np.ndarray, hp: GPHyperparams, name: str) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A.reshape(1, -1)
    if A.ndim != 2 or A.shape[1] != hp.dim:
        raise InvalidArgumentError(
            f"{name} has {A.shape[-1] if A.ndim else 0} columns but the kernel has {hp.dim} lengthscales"
        )
    return A


def k_eval(a: np.ndarray, b: np.ndarray, hp: GPHyperparams) -> float:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape[0] != hp.dim or b.shape[0] != hp.dim:
        raise InvalidArgumentError(f"points must have length {hp.dim}, got {a.shape[0]} and {b.shape[0]}")
    r2 = np.sum(((a - b) / hp.lengthscales) ** 2)
    return float(hp.sigma_f * np.exp(-0.5 * r2))


def scaled_sqdist(A: np.ndarray, B: np.ndarray, hp: GPHyperparams) -> np.ndarray:
    """Pairwise squared distances after dividing each coordinate by its lengthscale."""
    return cdist(A / hp.lengthscales, B / hp.lengthscales, metric="sqeuclidean")


def k_matrix(A: np.ndarray, B: np.ndarray, hp: GPHyperparams) -> np.ndarray:
    A = _as_design(A, hp, "A")
    B = _as_design(B, hp, "B")
    return hp.sigma_f * np.exp(-0.5 * scaled_sqdist(A, B, hp))


def k_grad_hyper(A: np.ndarray, hp: GPHyperparams) -> List[np.ndarray]:
    """
    Derivatives of the training covariance with respect to natural hyperparameters.

    Returns [dK/dsigma_f, dK/dl_1, ..., dK/dl_m, d(K + sigma_n^2 I)/dsigma_n].
    """
    A = _as_design(A, hp, "A")
    K = k_matrix(A, A, hp)
    grads = [K / hp.sigma_f]
    for i, ell in enumerate(hp.lengthscales):
        diff2 = (A[:, i][:, None] - A[:, i][None, :]) ** 2
        grads.append(K * diff2 / ell**3)
    grads.append(2.0 * hp.sigma_n * np.eye(A.shape[0]))
    return grads


def k_grad_input(x_star: np.ndarray, X: np.ndarray, hp: GPHyperparams) -> np.ndarray:
    """m' x n matrix whose column j is the gradient of k(x*, X_j) with respect to x*."""
    x_star = np.asarray(x_star, dtype=float).ravel()
    if x_star.shape[0] != hp.dim:
        raise InvalidArgumentError(f"x_star must have length {hp.dim}, got {x_star.shape[0]}")
    X = _as_design(X, hp, "X")
    k = k_matrix(x_star[None, :], X, hp)[0]
    diff = x_star[None, :] - X  # n x m'
    return (-(diff / hp.lengthscales**2) * k[:, None]).T
