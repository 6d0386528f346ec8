"""
stiefel.py - Orthonormal projection matrices.

Unconstrained parameters are mapped onto St(m, d) with a product of Householder
reflections: step i consumes a contiguous slice of length d - i (0-based i) and
reflects rows i..d-1 of the running frame. Gaussian parameters therefore give
Haar-distributed frames without any change of measure.

Also holds the tangent projection and QR retraction used by the MO-AS optimizer.
"""

from typing import List, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from errors import DegenerateReflectionError, DegenerateRetractionError, InvalidArgumentError

ORTHONORMAL_TOL = 1e-10


def n_params(d: int, m: int) -> int:
    """Number of Householder parameters k = m*d - m*(m-1)/2."""
    return m * d - m * (m - 1) // 2


class ProjectionParams(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    theta_p: np.ndarray
    d: int
    m: int

    @field_validator("theta_p", mode="before")
    @classmethod
    def _as_vector(cls, value):
        return np.asarray(value, dtype=float).ravel()

    @model_validator(mode="after")
    def _check_sizes(self):
        if self.m < 1 or self.d < self.m:
            raise ValueError(f"need d >= m >= 1, got d={self.d}, m={self.m}")
        k = n_params(self.d, self.m)
        if self.theta_p.shape[0] != k:
            raise ValueError(f"theta_p must have length {k} for d={self.d}, m={self.m}")
        return self

    @property
    def k(self) -> int:
        return n_params(self.d, self.m)


class ProjectionMatrix(BaseModel):
    """A d x m matrix with orthonormal columns."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    W: np.ndarray

    @field_validator("W", mode="before")
    @classmethod
    def _as_matrix(cls, value):
        W = np.asarray(value, dtype=float)
        if W.ndim == 1:
            W = W.reshape(-1, 1)
        return W

    @model_validator(mode="after")
    def _check_orthonormal(self):
        if self.W.ndim != 2 or self.W.shape[0] < self.W.shape[1]:
            raise ValueError(f"W must be d x m with d >= m, got shape {self.W.shape}")
        err = np.max(np.abs(self.W.T @ self.W - np.eye(self.W.shape[1])))
        if not err <= ORTHONORMAL_TOL:
            raise ValueError(f"W is not orthonormal (max |W^T W - I| = {err:.3g})")
        return self

    @property
    def d(self) -> int:
        return int(self.W.shape[0])

    @property
    def m(self) -> int:
        return int(self.W.shape[1])


MatrixLike = Union[ProjectionMatrix, np.ndarray]


def _matrix(W: MatrixLike) -> np.ndarray:
    if isinstance(W, ProjectionMatrix):
        return W.W
    W = np.asarray(W, dtype=float)
    return W.reshape(-1, 1) if W.ndim == 1 else W


def _sgn(x: float) -> float:
    # sgn(0) := +1
    return 1.0 if x >= 0 else -1.0


def _reflection(v: np.ndarray) -> Tuple[np.ndarray, float, float, float]:
    """Return (u, s, |v|, |w|) for the reflection built from slice v."""
    s = _sgn(v[0])
    norm_v = float(np.linalg.norm(v))
    if norm_v == 0.0:
        raise DegenerateReflectionError("Householder slice is the zero vector")
    w = v.copy()
    w[0] += s * norm_v
    norm_w = float(np.linalg.norm(w))
    return w / norm_w, s, norm_v, norm_w


def _apply_reflection(u: np.ndarray, s: float, B: np.ndarray) -> np.ndarray:
    """H_hat @ B with H_hat = -s (I - 2 u u^T), without forming H_hat."""
    return -s * (B - 2.0 * np.outer(u, u @ B))


def _forward(theta_p: np.ndarray, d: int, m: int):
    theta_p = np.asarray(theta_p, dtype=float)
    if np.any(np.isnan(theta_p)):
        raise InvalidArgumentError("theta_p contains NaN")
    P = np.eye(d, m)
    frames = []
    steps = []
    offset = 0
    for i in range(m):
        r = d - i
        v = theta_p[offset:offset + r]
        offset += r
        u, s, norm_v, norm_w = _reflection(v)
        frames.append(P.copy())
        steps.append((v, u, s, norm_v, norm_w))
        P[i:] = _apply_reflection(u, s, P[i:])
    return P, frames, steps


def householder_map(p: ProjectionParams) -> ProjectionMatrix:
    W, _, _ = _forward(p.theta_p, p.d, p.m)
    return ProjectionMatrix(W=W)


def householder_matrix(theta_p: np.ndarray, d: int, m: int) -> np.ndarray:
    """Plain-array version of `householder_map` for inner loops."""
    return _forward(theta_p, d, m)[0]


def householder_reflections(theta_p: np.ndarray, d: int, m: int) -> List[np.ndarray]:
    """The (d - i) x (d - i) reflection blocks built at each step, for inspection."""
    _, _, steps = _forward(theta_p, d, m)
    return [-s * (np.eye(u.shape[0]) - 2.0 * np.outer(u, u)) for _, u, s, _, _ in steps]


def householder_vjp(theta_p: np.ndarray, d: int, m: int, grad_W: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Pull a gradient with respect to W back onto theta_p.

    Returns (W, dL/dtheta_p). The sign choice sgn(v_1) is piecewise constant, so
    it contributes no derivative.
    """
    W, frames, steps = _forward(theta_p, d, m)
    G = np.array(grad_W, dtype=float, copy=True)
    grad_theta = np.zeros(n_params(d, m))
    offsets = np.concatenate([[0], np.cumsum([d - i for i in range(m)])])
    for i in reversed(range(m)):
        v, u, s, norm_v, norm_w = steps[i]
        B = frames[i][i:]
        Gi = G[i:]
        grad_u = 2.0 * s * (Gi @ (B.T @ u) + B @ (Gi.T @ u))
        grad_w = (grad_u - u * (u @ grad_u)) / norm_w
        grad_v = grad_w + s * grad_w[0] * v / norm_v
        grad_theta[offsets[i]:offsets[i + 1]] = grad_v
        G[i:] = _apply_reflection(u, s, Gi)
    return W, grad_theta


class HaarReport(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    sample_count: int
    d: int
    m: int
    first_column_mean: np.ndarray
    mean_tolerance: float
    first_column_sq_mean: np.ndarray
    sq_mean_target: float
    sq_mean_tolerance: float
    abs_det_mean: float = float("nan")
    mean_ok: bool
    sq_mean_ok: bool


def haar_uniformity_check(sample_count: int, d: int, m: int, seed: int) -> HaarReport:
    """Draw theta_p ~ N(0, I), map through the Householder construction and test first-column moments."""
    if sample_count < 1000:
        raise InvalidArgumentError("sample_count must be at least 1000")
    rng = np.random.default_rng(seed)
    k = n_params(d, m)
    first = np.empty((sample_count, d))
    dets = []
    for t in range(sample_count):
        W = householder_matrix(rng.standard_normal(k), d, m)
        first[t] = W[:, 0]
        if m == d:
            dets.append(abs(np.linalg.det(W)))
    mean = first.mean(axis=0)
    sq_mean = (first**2).mean(axis=0)
    mean_tol = 4.0 / np.sqrt(sample_count)
    # Var(u_i^2) for a uniform unit vector is 2(d-1)/(d^2 (d+2)); allow 4 standard errors
    sq_tol = 4.0 * np.sqrt(2.0 * (d - 1) / (d**2 * (d + 2)) / sample_count) if d > 1 else 1e-12
    return HaarReport(
        sample_count=sample_count,
        d=d,
        m=m,
        first_column_mean=mean,
        mean_tolerance=mean_tol,
        first_column_sq_mean=sq_mean,
        sq_mean_target=1.0 / d,
        sq_mean_tolerance=sq_tol,
        abs_det_mean=float(np.mean(dets)) if dets else float("nan"),
        mean_ok=bool(np.all(np.abs(mean) <= mean_tol)),
        sq_mean_ok=bool(np.all(np.abs(sq_mean - 1.0 / d) <= sq_tol)),
    )


def _check_orthonormal(W: np.ndarray, tol: float = 1e-8) -> None:
    err = np.max(np.abs(W.T @ W - np.eye(W.shape[1])))
    if not err <= tol:
        raise InvalidArgumentError(f"W is not orthonormal (max |W^T W - I| = {err:.3g})")


def tangent_project(W: MatrixLike, G: np.ndarray) -> np.ndarray:
    """Project a Euclidean d x m direction onto the tangent space of St(m, d) at W."""
    W = _matrix(W)
    G = np.asarray(G, dtype=float).reshape(W.shape)
    _check_orthonormal(W)
    WtG = W.T @ G
    return G - W @ (0.5 * (WtG + WtG.T))


def qr_retract(W: MatrixLike, xi: np.ndarray) -> ProjectionMatrix:
    """Q factor of W + xi, with signs fixed so that diag(R) > 0."""
    W = _matrix(W)
    xi = np.asarray(xi, dtype=float).reshape(W.shape)
    Q, R = np.linalg.qr(W + xi)
    diag = np.diag(R)
    scale = np.max(np.abs(diag)) if diag.size else 0.0
    if scale == 0.0 or np.min(np.abs(diag)) <= 1e-12 * scale:
        raise DegenerateRetractionError("W + xi is rank deficient")
    signs = np.where(diag < 0, -1.0, 1.0)
    return ProjectionMatrix(W=Q * signs)
