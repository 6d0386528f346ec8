"""
model.py - Fully Bayesian active-subspace GP (BAS)

Unconstrained sampling coordinates, one flat vector per draw:

    [ theta_p (k values) | log sigma_n | log sigma_f | log l_1 ... log l_m ]

Every coordinate has a standard normal prior. theta_p maps to the projection W
through the Householder construction in stiefel.py, so the prior on W is the
Haar measure. Inputs are projected (Z = X W) and a zero-mean GP with ARD kernel
links Z to y.

The same PosteriorSamples container also carries full-dimensional GP posteriors
(kind "bgp"); their vectors hold only the d + 2 log hyperparameters.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy.special import logsumexp
from scipy.stats import norm

from config import ARTIFACT_VERSION, PREDICT_CONFIG
from errors import DataError, InvalidArgumentError
from gp import LOG_2PI, fit_posterior, log_marginal_likelihood, log_marginal_likelihood_with_grads, posterior_predict
from kernel import GPHyperparams
from sampler import ChainDiagnostics, SamplerConfig, nuts_sample
from stiefel import ProjectionMatrix, ProjectionParams, householder_map, householder_matrix, householder_vjp, n_params
from transform import Standardization

logger = logging.getLogger(__name__)

KINDS = ("bas", "bgp")


def hyperparameter_order(m: int) -> List[str]:
    return ["log_sigma_n", "log_sigma_f"] + [f"log_l{i + 1}" for i in range(m)]


class BASParams(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    theta_p: ProjectionParams
    log_hp: np.ndarray

    @field_validator("log_hp", mode="before")
    @classmethod
    def _as_vector(cls, value):
        return np.asarray(value, dtype=float).ravel()

    @model_validator(mode="after")
    def _check_length(self):
        if self.log_hp.shape[0] != self.theta_p.m + 2:
            raise ValueError(f"log_hp must have length m + 2 = {self.theta_p.m + 2}")
        return self

    @property
    def dim(self) -> int:
        return self.theta_p.k + self.theta_p.m + 2

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.theta_p.theta_p, self.log_hp])

    @classmethod
    def from_vector(cls, vector: np.ndarray, d: int, m: int) -> "BASParams":
        vector = np.asarray(vector, dtype=float).ravel()
        k = n_params(d, m)
        if vector.shape[0] != k + m + 2:
            raise InvalidArgumentError(f"expected {k + m + 2} coordinates for d={d}, m={m}, got {vector.shape[0]}")
        return cls(theta_p=ProjectionParams(theta_p=vector[:k], d=d, m=m), log_hp=vector[k:])


def log_prior(p: BASParams) -> float:
    return float(np.sum(norm.logpdf(p.to_vector())))


def _check_design(X: np.ndarray, y: np.ndarray, d: int) -> Tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[1] != d or X.shape[0] != y.shape[0]:
        raise InvalidArgumentError(f"X must be n x {d} with n = len(y), got {X.shape} and {y.shape}")
    return X, y


def log_posterior(p: BASParams, X: np.ndarray, y: np.ndarray) -> float:
    X, y = _check_design(X, y, p.theta_p.d)
    W = householder_map(p.theta_p).W
    hp = GPHyperparams.from_log(p.log_hp)
    return log_prior(p) + log_marginal_likelihood(X @ W, y, hp)


def log_posterior_grad(p: BASParams, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    return BASLogDensity(X, y, p.theta_p.d, p.theta_p.m).value_and_grad(p.to_vector())[1]


class BASLogDensity:
    """Log posterior and gradient over flat vectors; one Cholesky per evaluation."""

    def __init__(self, X: np.ndarray, y: np.ndarray, d: int, m: int):
        self.X, self.y = _check_design(X, y, d)
        self.d = d
        self.m = m
        self.k = n_params(d, m)
        self.dim = self.k + m + 2

    def value_and_grad(self, vector: np.ndarray) -> Tuple[float, np.ndarray]:
        vector = np.asarray(vector, dtype=float)
        theta_p, log_hp = vector[: self.k], vector[self.k:]
        W = householder_matrix(theta_p, self.d, self.m)
        hp = GPHyperparams.from_log(log_hp)
        value, grad_Z, grad_log = log_marginal_likelihood_with_grads(self.X @ W, self.y, hp)
        _, grad_theta = householder_vjp(theta_p, self.d, self.m, self.X.T @ grad_Z)
        prior = float(np.sum(norm.logpdf(vector)))
        grad = np.concatenate([grad_theta, grad_log]) - vector
        return value + prior, grad

    def __call__(self, vector: np.ndarray) -> float:
        return self.value_and_grad(vector)[0]


class GPLogDensity:
    """Log posterior over the d + 2 log hyperparameters of a GP on the raw inputs."""

    def __init__(self, X: np.ndarray, y: np.ndarray):
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float).ravel()
        self.dim = self.X.shape[1] + 2

    def value_and_grad(self, vector: np.ndarray) -> Tuple[float, np.ndarray]:
        vector = np.asarray(vector, dtype=float)
        hp = GPHyperparams.from_log(vector)
        value, _, grad_log = log_marginal_likelihood_with_grads(self.X, self.y, hp)
        return value + float(np.sum(norm.logpdf(vector))), grad_log - vector

    def __call__(self, vector: np.ndarray) -> float:
        return self.value_and_grad(vector)[0]


class PosteriorSamples(BaseModel):
    """Post-warmup draws plus everything needed to predict from them."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    kind: str = "bas"
    chains: np.ndarray  # (chains, draws, dim)
    d: int
    m: int
    seed: int = 0
    warmup: int = 0
    standardization: Standardization
    diagnostics: Optional[ChainDiagnostics] = None
    X_train: Optional[np.ndarray] = None  # original units
    y_train: Optional[np.ndarray] = None
    training_seconds: float = 0.0
    config_hash: str = ""
    artifact_version: str = ARTIFACT_VERSION

    @model_validator(mode="after")
    def _check(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.chains.ndim != 3 or self.chains.shape[0] < 1 or self.chains.shape[1] < 1:
            raise ValueError("chains must be a non-empty (chains, draws, dim) array")
        if self.chains.shape[2] != self.param_dim:
            raise ValueError(f"draws must have {self.param_dim} coordinates, got {self.chains.shape[2]}")
        return self

    @property
    def n_chains(self) -> int:
        return int(self.chains.shape[0])

    @property
    def n_draws(self) -> int:
        return int(self.chains.shape[1])

    @property
    def k(self) -> int:
        return n_params(self.d, self.m) if self.kind == "bas" else 0

    @property
    def gp_dim(self) -> int:
        """Number of lengthscales of the link GP."""
        return self.m if self.kind == "bas" else self.d

    @property
    def param_dim(self) -> int:
        return self.k + self.gp_dim + 2

    def parameter_names(self) -> List[str]:
        return [f"theta_p{i}" for i in range(self.k)] + hyperparameter_order(self.gp_dim)

    def flat_draws(self) -> np.ndarray:
        return self.chains.reshape(-1, self.chains.shape[2])

    def draw_components(self, vector: np.ndarray) -> Tuple[Optional[np.ndarray], GPHyperparams]:
        """(W or None for full-dimensional GPs, hyperparameters) for one flat draw."""
        hp = GPHyperparams.from_log(vector[self.k:])
        if self.kind == "bgp":
            return None, hp
        return householder_matrix(vector[: self.k], self.d, self.m), hp


def train_bas(
    X: np.ndarray,
    y: np.ndarray,
    m: int,
    cfg: SamplerConfig,
    standardization: Optional[Standardization] = None,
) -> PosteriorSamples:
    """Sample the BAS posterior on standardized training data; initial points come from the prior."""
    d = int(np.shape(X)[1]) if np.ndim(X) == 2 else 0
    if not 1 <= m <= d:
        raise InvalidArgumentError(f"need 1 <= m <= d, got m={m}, d={d}")
    target = BASLogDensity(X, y, d, m)
    X = target.X
    logger.info("[BAS] sampling d=%d m=%d n=%d (%d coordinates)", d, m, X.shape[0], target.dim)
    result = nuts_sample(
        target,
        None,
        target.dim,
        cfg,
        init_fn=lambda rng: rng.standard_normal(target.dim),
        value_and_grad=target.value_and_grad,
    )
    return PosteriorSamples(
        kind="bas",
        chains=result.chains,
        d=d,
        m=m,
        seed=cfg.seed,
        warmup=cfg.warmup,
        standardization=standardization or Standardization.identity(d),
        diagnostics=result.diagnostics,
    )


def posterior_projections(samples: PosteriorSamples) -> List[ProjectionMatrix]:
    if samples.kind != "bas":
        raise InvalidArgumentError("projection draws exist only for BAS posteriors")
    return [ProjectionMatrix(W=samples.draw_components(v)[0]) for v in samples.flat_draws()]


# ---------------------------
# Marginal prediction
# ---------------------------


class MarginalPrediction(BaseModel):
    """
    Equal-weight Gaussian mixture over posterior draws, with a pooled sample.

    mean/std are the exact mixture moments; median and quantiles are pool statistics.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    component_means: np.ndarray  # (draws, points)
    component_vars: np.ndarray
    median: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    q05: np.ndarray
    q95: np.ndarray
    pool_size: int

    def log_density(self, actual: np.ndarray, gamma: int = 1) -> np.ndarray:
        """
        Per-point log of the mixture density at `actual`, with the Gaussian
        normalising constant scaled by gamma: -(gamma/2) log 2 pi.
        """
        actual = np.asarray(actual, dtype=float).ravel()
        if actual.shape[0] != self.mean.shape[0]:
            raise InvalidArgumentError("actual values and predictions differ in length")
        sd = np.sqrt(self.component_vars)
        terms = -0.5 * ((actual[None, :] - self.component_means) / sd) ** 2 - np.log(sd)
        return logsumexp(terms, axis=0) - np.log(terms.shape[0]) - 0.5 * gamma * LOG_2PI

    def destandardize(self, std: Standardization) -> "MarginalPrediction":
        s, mu = std.y_scale, std.y_mean
        return MarginalPrediction(
            component_means=self.component_means * s + mu,
            component_vars=self.component_vars * s**2,
            median=self.median * s + mu,
            mean=self.mean * s + mu,
            std=self.std * s,
            q05=self.q05 * s + mu,
            q95=self.q95 * s + mu,
            pool_size=self.pool_size,
        )

    def to_records(self) -> List[Dict[str, float]]:
        return [
            {"median": float(a), "mean": float(b), "std": float(c), "q05": float(e), "q95": float(f)}
            for a, b, c, e, f in zip(self.median, self.mean, self.std, self.q05, self.q95)
        ]


def _predict_one_draw(samples, vector, index, X_star, X, y, draws_per_sample, seed):
    W, hp = samples.draw_components(vector)
    Z, Z_star = (X, X_star) if W is None else (X @ W, X_star @ W)
    pred = posterior_predict(fit_posterior(Z, y, hp), Z_star)
    # counter-based stream per draw keeps parallel and sequential runs identical
    noise = np.random.default_rng([seed, index]).standard_normal((draws_per_sample, Z_star.shape[0]))
    return pred.mean, pred.variance, pred.mean[None, :] + noise * pred.std[None, :]


def predict_marginal(
    samples: PosteriorSamples,
    X_star: np.ndarray,
    X: np.ndarray,
    y: np.ndarray,
    draws_per_sample: Optional[int] = None,
    seed: int = 0,
    enable_parallel: Optional[bool] = None,
) -> MarginalPrediction:
    """
    Marginalize the GP predictive over all posterior draws.

    X_star, X and y are in standardized coordinates; call `.destandardize` on the
    result for original units.
    """
    draws_per_sample = PREDICT_CONFIG["draws_per_sample"] if draws_per_sample is None else draws_per_sample
    enable_parallel = PREDICT_CONFIG["enable_parallel_draws"] if enable_parallel is None else enable_parallel
    if draws_per_sample < 1:
        raise InvalidArgumentError("draws_per_sample must be >= 1")
    flat = samples.flat_draws()
    if flat.shape[0] == 0:
        raise InvalidArgumentError("posterior has no draws")
    X_star = np.asarray(X_star, dtype=float)
    if X_star.ndim == 1:
        X_star = X_star.reshape(1, -1)
    X, y = _check_design(X, y, samples.d)
    if X_star.shape[1] != samples.d:
        raise DataError(f"prediction inputs have {X_star.shape[1]} columns, model expects {samples.d}")

    def work(t):
        return _predict_one_draw(samples, flat[t], t, X_star, X, y, draws_per_sample, seed)

    if enable_parallel and flat.shape[0] > 1:
        with ThreadPoolExecutor() as pool:
            results = list(pool.map(work, range(flat.shape[0])))
    else:
        results = [work(t) for t in range(flat.shape[0])]

    means = np.stack([r[0] for r in results])
    variances = np.stack([r[1] for r in results])
    pool_draws = np.concatenate([r[2] for r in results], axis=0)
    mixture_mean = means.mean(axis=0)
    mixture_var = np.maximum((variances + means**2).mean(axis=0) - mixture_mean**2, 0.0)
    q05, median, q95 = np.quantile(pool_draws, [0.05, 0.5, 0.95], axis=0)
    return MarginalPrediction(
        component_means=means,
        component_vars=variances,
        median=median,
        mean=mixture_mean,
        std=np.sqrt(mixture_var),
        q05=q05,
        q95=q95,
        pool_size=int(pool_draws.shape[0]),
    )


# ---------------------------
# Persistence
# ---------------------------


def posterior_to_dict(samples: PosteriorSamples) -> Dict[str, Any]:
    payload = {
        "artifact_version": samples.artifact_version,
        "config_hash": samples.config_hash,
        "meta": {
            "kind": samples.kind,
            "d": samples.d,
            "m": samples.m,
            "chains": samples.n_chains,
            "draws": samples.n_draws,
            "warmup": samples.warmup,
            "seed": samples.seed,
            "hyperparameter_order": hyperparameter_order(samples.gp_dim),
            "parameter_names": samples.parameter_names(),
        },
        "standardization": samples.standardization.to_dict(),
        "training_seconds": samples.training_seconds,
        "chains": samples.chains.tolist(),
        "diagnostics": samples.diagnostics.model_dump() if samples.diagnostics else None,
    }
    if samples.X_train is not None:
        payload["training"] = {"X": samples.X_train.tolist(), "y": samples.y_train.tolist()}
    return payload


def posterior_from_dict(payload: Dict[str, Any]) -> PosteriorSamples:
    try:
        meta = payload["meta"]
        training = payload.get("training")
        return PosteriorSamples(
            kind=meta.get("kind", "bas"),
            chains=np.asarray(payload["chains"], dtype=float),
            d=meta["d"],
            m=meta["m"],
            seed=meta.get("seed", 0),
            warmup=meta.get("warmup", 0),
            standardization=Standardization(**payload["standardization"]),
            diagnostics=ChainDiagnostics(**payload["diagnostics"]) if payload.get("diagnostics") else None,
            X_train=np.asarray(training["X"], dtype=float) if training else None,
            y_train=np.asarray(training["y"], dtype=float) if training else None,
            training_seconds=payload.get("training_seconds", 0.0),
            config_hash=payload.get("config_hash", ""),
            artifact_version=payload.get("artifact_version", ARTIFACT_VERSION),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"invalid posterior document: {e}")


def save_posterior(samples: PosteriorSamples, path: Union[str, Path]) -> None:
    # json writes floats with repr(), which round-trips every double exactly
    Path(path).write_text(json.dumps(posterior_to_dict(samples)), encoding="utf-8")


def load_posterior(path: Union[str, Path]) -> PosteriorSamples:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataError(f"{path} is not valid JSON: {e}")
    return posterior_from_dict(payload)
