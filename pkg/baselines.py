"""
baselines.py - Comparison methods

MO-AS: maximum marginal likelihood over (W, hyperparameters). W moves on the
Stiefel manifold by Riemannian gradient steps (tangent projection + QR
retraction), the hyperparameters by gradient steps in log space, alternating,
each with Armijo backtracking. Many random restarts; the best one wins.

B-GP: a fully Bayesian GP on all d inputs (NUTS over d + 2 log hyperparameters).
Its active subspace is read off afterwards from the gradient covariance of the
posterior mean, estimated by Monte Carlo for a thinned set of posterior draws.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError
from scipy.stats import norm

from config import ARTIFACT_VERSION, BGP_CONFIG, MOAS_CONFIG
from errors import DataError, InvalidArgumentError, SurrogateError, TrainingError
from gp import fit_posterior, log_marginal_likelihood_with_grads, posterior_mean_grad_batch, posterior_predict
from kernel import GPHyperparams
from model import GPLogDensity, MarginalPrediction, PosteriorSamples, predict_marginal
from sampler import SamplerConfig, nuts_sample
from stiefel import ProjectionMatrix, householder_matrix, n_params, qr_retract, tangent_project
from transform import Standardization

logger = logging.getLogger(__name__)

Z_95 = float(norm.ppf(0.95))


# ---------------------------
# Gradient covariance
# ---------------------------


class GradientCovariance(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    C: np.ndarray
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # columns matched to eigenvalues

    def leading(self, m: int) -> ProjectionMatrix:
        if not 1 <= m <= self.C.shape[0]:
            raise InvalidArgumentError(f"m must lie in [1, {self.C.shape[0]}], got {m}")
        return ProjectionMatrix(W=self.eigenvectors[:, :m])


def eigendecompose(C: np.ndarray) -> GradientCovariance:
    """
    Symmetric eigendecomposition, eigenvalues descending.

    Ties keep ascending index order; each eigenvector's largest-magnitude entry
    is made positive.
    """
    C = 0.5 * (C + C.T)
    values, vectors = np.linalg.eigh(C)
    order = np.argsort(-values, kind="stable")
    values, vectors = values[order], vectors[:, order]
    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.where(vectors[pivots, np.arange(vectors.shape[1])] < 0, -1.0, 1.0)
    return GradientCovariance(C=C, eigenvalues=values, eigenvectors=vectors * signs)


def gradient_covariance(G: np.ndarray) -> GradientCovariance:
    """C = (1/n) sum_i g_i g_i^T from an n x d gradient sample."""
    G = np.asarray(G, dtype=float)
    if G.ndim == 1:
        G = G.reshape(1, -1)
    if G.shape[0] < 1:
        raise InvalidArgumentError("need at least one gradient sample")
    if not np.all(np.isfinite(G)):
        bad = np.argwhere(~np.isfinite(G))[0]
        raise DataError("gradient sample contains NaN or Inf", row=int(bad[0]), column=f"g{int(bad[1])}")
    return eigendecompose(G.T @ G / G.shape[0])


def reference_subspace_from_gradients(G: np.ndarray, m: int) -> Tuple[GradientCovariance, ProjectionMatrix]:
    cov = gradient_covariance(G)
    return cov, cov.leading(m)


# ---------------------------
# MO-AS
# ---------------------------


class MOASModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    W: ProjectionMatrix
    hp: GPHyperparams
    restarts_used: int
    best_loglik: float
    best_restart: int = 0
    failure_counts: Dict[str, int] = {}
    gradient_norm: float = float("nan")
    hit_max_iterations: bool = False
    iterations: int = 0
    trace: List[float] = []
    seed: int = 0
    standardization: Optional[Standardization] = None
    X_train: Optional[np.ndarray] = None  # original units
    y_train: Optional[np.ndarray] = None
    training_seconds: float = 0.0
    config_hash: str = ""
    artifact_version: str = ARTIFACT_VERSION

    @property
    def d(self) -> int:
        return self.W.d

    @property
    def m(self) -> int:
        return self.W.m


class _RestartResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    W: np.ndarray
    log_hp: np.ndarray
    loglik: float
    gradient_norm: float
    iterations: int
    hit_max_iterations: bool
    trace: List[float]


_RECOVERABLE = (SurrogateError, ValidationError, np.linalg.LinAlgError, FloatingPointError, OverflowError)


def _evaluate(X, y, W, log_hp):
    """(loglik, Riemannian gradient on W, gradient in log hp)."""
    hp = GPHyperparams.from_log(log_hp)
    value, grad_Z, grad_log = log_marginal_likelihood_with_grads(X @ W, y, hp)
    if not np.isfinite(value):
        raise FloatingPointError("non-finite log marginal likelihood")
    return value, tangent_project(W, X.T @ grad_Z), grad_log


def _line_search(evaluate, step, direction_sq, current, cfg):
    """Backtrack from `step` until the Armijo condition holds; returns (step, evaluation) or None."""
    for _ in range(cfg["max_backtracks"]):
        try:
            trial = evaluate(step)
        except _RECOVERABLE:
            trial = None
        if trial is not None and trial[0] >= current + cfg["armijo"] * step * direction_sq:
            return step, trial
        step *= cfg["backtrack_factor"]
    return None


def _moas_restart(X, y, m, seed, restart, max_iterations) -> _RestartResult:
    cfg = MOAS_CONFIG
    d = X.shape[1]
    rng = np.random.default_rng([seed, restart])
    W = householder_matrix(rng.standard_normal(n_params(d, m)), d, m)
    log_hp = rng.standard_normal(m + 2)
    value, riem, grad_log = _evaluate(X, y, W, log_hp)
    trace = [value]
    step_W = step_hp = cfg["initial_step"]
    iteration = 0
    grad_norm = float(np.sqrt(np.sum(riem**2) + np.sum(grad_log**2)))
    while iteration < max_iterations and grad_norm >= cfg["gradient_tol"]:
        iteration += 1
        moved = False

        W_dir = riem
        found = _line_search(
            lambda t: _with_point(X, y, qr_retract(W, t * W_dir).W, log_hp),
            step_W * 2.0, float(np.sum(W_dir**2)), value, cfg,
        )
        if found is not None:
            step_W, (value, riem, grad_log, W, log_hp) = found
            trace.append(value)
            moved = True

        hp_dir = grad_log
        found = _line_search(
            lambda t: _with_point(X, y, W, log_hp + t * hp_dir),
            step_hp * 2.0, float(np.sum(hp_dir**2)), value, cfg,
        )
        if found is not None:
            step_hp, (value, riem, grad_log, W, log_hp) = found
            trace.append(value)
            moved = True

        grad_norm = float(np.sqrt(np.sum(riem**2) + np.sum(grad_log**2)))
        if not moved:
            # no ascent direction survives backtracking; treat as stationary
            break
    return _RestartResult(
        W=W,
        log_hp=log_hp,
        loglik=value,
        gradient_norm=grad_norm,
        iterations=iteration,
        hit_max_iterations=iteration >= max_iterations and grad_norm >= cfg["gradient_tol"],
        trace=trace,
    )


def _with_point(X, y, W, log_hp):
    value, riem, grad_log = _evaluate(X, y, W, log_hp)
    return value, riem, grad_log, W, log_hp


def moas_train(
    X: np.ndarray,
    y: np.ndarray,
    m: int,
    restarts: Optional[int] = None,
    seed: int = 0,
    max_iterations: Optional[int] = None,
    enable_parallel: Optional[bool] = None,
) -> MOASModel:
    """Best-of-restarts maximum-likelihood fit on standardized data."""
    restarts = MOAS_CONFIG["restarts"] if restarts is None else restarts
    max_iterations = MOAS_CONFIG["max_iterations"] if max_iterations is None else max_iterations
    enable_parallel = MOAS_CONFIG["enable_parallel_restarts"] if enable_parallel is None else enable_parallel
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise InvalidArgumentError("X must be n x d with n = len(y)")
    if not 1 <= m <= X.shape[1] or restarts < 1:
        raise InvalidArgumentError(f"need 1 <= m <= d and restarts >= 1, got m={m}, restarts={restarts}")

    def run(r):
        try:
            return _moas_restart(X, y, m, seed, r, max_iterations)
        except _RECOVERABLE as e:
            logger.debug("[MOAS] restart %d failed: %s", r, e)
            return type(e).__name__

    logger.info("[MOAS] %d restarts, d=%d m=%d n=%d", restarts, X.shape[1], m, X.shape[0])
    if enable_parallel and restarts > 1:
        with ThreadPoolExecutor() as pool:
            results = list(pool.map(run, range(restarts)))
    else:
        results = [run(r) for r in range(restarts)]

    failures: Dict[str, int] = {}
    best_index, best = -1, None
    for r, result in enumerate(results):
        if isinstance(result, str):
            failures[result] = failures.get(result, 0) + 1
            continue
        # strict comparison keeps the lowest restart index on ties
        if best is None or result.loglik > best.loglik:
            best_index, best = r, result
    if best is None:
        raise TrainingError(f"all {restarts} MO-AS restarts failed", failure_counts=failures)
    logger.info(
        "[MOAS] best restart %d/%d loglik=%.6g grad=%.2e failed=%d",
        best_index + 1, restarts, best.loglik, best.gradient_norm, sum(failures.values()),
    )
    return MOASModel(
        W=ProjectionMatrix(W=best.W),
        hp=GPHyperparams.from_log(best.log_hp),
        restarts_used=restarts,
        best_loglik=best.loglik,
        best_restart=best_index,
        failure_counts=failures,
        gradient_norm=best.gradient_norm,
        hit_max_iterations=best.hit_max_iterations,
        iterations=best.iterations,
        trace=best.trace,
        seed=seed,
    )


def moas_predict(model: MOASModel, X: np.ndarray, y: np.ndarray, X_star: np.ndarray) -> MarginalPrediction:
    """Closed-form Gaussian predictive, wrapped as a one-component mixture (standardized units)."""
    X_star = np.asarray(X_star, dtype=float)
    if X_star.ndim == 1:
        X_star = X_star.reshape(1, -1)
    if X_star.shape[1] != model.d:
        raise DataError(f"prediction inputs have {X_star.shape[1]} columns, model expects {model.d}")
    W = model.W.W
    pred = posterior_predict(fit_posterior(np.asarray(X, dtype=float) @ W, y, model.hp), X_star @ W)
    sd = pred.std
    return MarginalPrediction(
        component_means=pred.mean[None, :],
        component_vars=pred.variance[None, :],
        median=pred.mean,
        mean=pred.mean,
        std=sd,
        q05=pred.mean - Z_95 * sd,
        q95=pred.mean + Z_95 * sd,
        pool_size=0,
    )


def moas_to_dict(model: MOASModel) -> Dict[str, Any]:
    payload = {
        "artifact_version": model.artifact_version,
        "config_hash": model.config_hash,
        "meta": {"kind": "moas", "d": model.d, "m": model.m, "seed": model.seed},
        "W": model.W.W.tolist(),
        "hyperparameters": {
            "sigma_n": model.hp.sigma_n,
            "sigma_f": model.hp.sigma_f,
            "lengthscales": model.hp.lengthscales.tolist(),
        },
        "restarts_used": model.restarts_used,
        "best_restart": model.best_restart,
        "best_loglik": model.best_loglik,
        "failure_counts": model.failure_counts,
        "gradient_norm": model.gradient_norm,
        "hit_max_iterations": model.hit_max_iterations,
        "iterations": model.iterations,
        "trace": model.trace,
        "training_seconds": model.training_seconds,
        "standardization": model.standardization.to_dict() if model.standardization else None,
    }
    if model.X_train is not None:
        payload["training"] = {"X": model.X_train.tolist(), "y": model.y_train.tolist()}
    return payload


def moas_from_dict(payload: Dict[str, Any]) -> MOASModel:
    try:
        training = payload.get("training")
        std = payload.get("standardization")
        return MOASModel(
            W=ProjectionMatrix(W=payload["W"]),
            hp=GPHyperparams(**payload["hyperparameters"]),
            restarts_used=payload["restarts_used"],
            best_restart=payload.get("best_restart", 0),
            best_loglik=payload["best_loglik"],
            failure_counts=payload.get("failure_counts", {}),
            gradient_norm=payload.get("gradient_norm", float("nan")),
            hit_max_iterations=payload.get("hit_max_iterations", False),
            iterations=payload.get("iterations", 0),
            trace=payload.get("trace", []),
            seed=payload.get("meta", {}).get("seed", 0),
            standardization=Standardization(**std) if std else None,
            X_train=np.asarray(training["X"], dtype=float) if training else None,
            y_train=np.asarray(training["y"], dtype=float) if training else None,
            training_seconds=payload.get("training_seconds", 0.0),
            config_hash=payload.get("config_hash", ""),
            artifact_version=payload.get("artifact_version", ARTIFACT_VERSION),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"invalid MO-AS model document: {e}")


def save_moas(model: MOASModel, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(moas_to_dict(model)), encoding="utf-8")


def load_moas(path: Union[str, Path]) -> MOASModel:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataError(f"{path} is not valid JSON: {e}")
    return moas_from_dict(payload)


# ---------------------------
# B-GP
# ---------------------------


def bgp_train(
    X: np.ndarray,
    y: np.ndarray,
    cfg: SamplerConfig,
    m: int = 1,
    standardization: Optional[Standardization] = None,
) -> PosteriorSamples:
    """
    NUTS over the d + 2 log hyperparameters of a full-dimensional GP.

    `m` is the subspace dimension later extracted by `bgp_estimate_subspace`;
    it does not affect sampling.
    """
    target = GPLogDensity(X, y)
    d = target.X.shape[1]
    if target.X.shape[0] != target.y.shape[0]:
        raise InvalidArgumentError("X must be n x d with n = len(y)")
    logger.info("[BGP] sampling d=%d n=%d (%d coordinates)", d, target.X.shape[0], target.dim)
    result = nuts_sample(
        target,
        None,
        target.dim,
        cfg,
        init_fn=lambda rng: rng.standard_normal(target.dim),
        value_and_grad=target.value_and_grad,
    )
    return PosteriorSamples(
        kind="bgp",
        chains=result.chains,
        d=d,
        m=m,
        seed=cfg.seed,
        warmup=cfg.warmup,
        standardization=standardization or Standardization.identity(d),
        diagnostics=result.diagnostics,
    )


def thinned_indices(total: int, count: int) -> np.ndarray:
    """`count` evenly spaced indices into range(total), or all of them if fewer."""
    if count >= total:
        return np.arange(total)
    return np.unique(np.linspace(0, total - 1, count).round().astype(int))


class BGPSubspace(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    projections: List[ProjectionMatrix]
    covariances: List[GradientCovariance]
    draw_indices: List[int]


def bgp_estimate_subspace(
    posterior: PosteriorSamples,
    X_train: np.ndarray,
    y: np.ndarray,
    n_grad: Optional[int] = None,
    m: Optional[int] = None,
    seed: int = 0,
    thin_draws: Optional[int] = None,
    enable_parallel: bool = True,
) -> BGPSubspace:
    """
    Per thinned draw: C_hat from posterior-mean gradients at uniform points in the input box.

    The box is the axis-aligned min/max hull of the (standardized) training inputs, not
    the generator's [-1, 1]^d domain; the same `seed` gives the same points for every draw.
    """
    n_grad = BGP_CONFIG["n_grad"] if n_grad is None else n_grad
    thin_draws = BGP_CONFIG["thin_draws"] if thin_draws is None else thin_draws
    m = posterior.m if m is None else m
    if posterior.kind != "bgp":
        raise InvalidArgumentError("subspace estimation needs a full-dimensional GP posterior")
    if n_grad < 1:
        raise InvalidArgumentError("n_grad must be >= 1")
    X_train = np.asarray(X_train, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    lo, hi = X_train.min(axis=0), X_train.max(axis=0)
    points = np.random.default_rng(seed).uniform(lo, hi, size=(n_grad, X_train.shape[1]))
    flat = posterior.flat_draws()
    indices = thinned_indices(flat.shape[0], thin_draws)

    def work(t):
        _, hp = posterior.draw_components(flat[t])
        post = fit_posterior(X_train, y, hp)
        cov = gradient_covariance(posterior_mean_grad_batch(post, points))
        return cov.leading(m), cov

    if enable_parallel and len(indices) > 1:
        with ThreadPoolExecutor() as pool:
            results = list(pool.map(work, indices))
    else:
        results = [work(t) for t in indices]
    logger.info("[BGP] estimated subspaces for %d draws with %d gradient points", len(indices), n_grad)
    return BGPSubspace(
        projections=[r[0] for r in results],
        covariances=[r[1] for r in results],
        draw_indices=[int(t) for t in indices],
    )


def bgp_predict(
    samples: PosteriorSamples,
    X: np.ndarray,
    y: np.ndarray,
    X_star: np.ndarray,
    draws_per_sample: Optional[int] = None,
    seed: int = 0,
) -> MarginalPrediction:
    if samples.kind != "bgp":
        raise InvalidArgumentError("bgp_predict needs a full-dimensional GP posterior")
    return predict_marginal(samples, X_star, X, y, draws_per_sample=draws_per_sample, seed=seed)
