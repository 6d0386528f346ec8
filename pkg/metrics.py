"""
metrics.py - Evaluation metrics for surrogate comparisons

    r_squared   1 - mean((f - f_hat)^2) / mean(f^2)   (uncentered, as reported)
    mlppd       mean over validation points of the log predictive density,
                with the Gaussian constant written as -(gamma/2) log 2 pi
    mfsa        mean over posterior projections of the largest principal angle
                to a reference subspace
    training    wall-clock seconds on a monotonic clock
"""

import logging
import time
from typing import Any, Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator
from scipy.linalg import subspace_angles

from config import ARTIFACT_VERSION
from errors import InvalidArgumentError, UndefinedMetricError
from gp import LOG_2PI
from stiefel import ProjectionMatrix

logger = logging.getLogger(__name__)

# evaluator(actual, gamma) -> per-point log predictive density
LogDensityEvaluator = Callable[[np.ndarray, int], np.ndarray]


class SubspaceAngles(BaseModel):
    """Principal angles in radians, largest first."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    angles: np.ndarray

    @field_validator("angles", mode="before")
    @classmethod
    def _as_vector(cls, value):
        return np.atleast_1d(np.asarray(value, dtype=float))

    @property
    def first(self) -> float:
        return float(self.angles[0])


class MetricsReport(BaseModel):
    method: str
    dataset: str
    d: int
    m: int
    n_train: int
    seed: int
    r_squared: Optional[float] = None
    mlppd: Optional[float] = None
    mfsa: Optional[float] = None  # radians
    training_seconds: float = 0.0
    status: str = "ok"
    config_hash: str = ""
    artifact_version: str = ARTIFACT_VERSION

    def to_row(self) -> Dict[str, Any]:
        return {
            "method": self.method,
            "dataset": self.dataset,
            "d": self.d,
            "m": self.m,
            "n_train": self.n_train,
            "seed": self.seed,
            "r_squared": self.r_squared,
            "mlppd": self.mlppd,
            "mfsa_rad": self.mfsa,
            "training_seconds": self.training_seconds,
            "status": self.status,
            "config_hash": self.config_hash,
            "artifact_version": self.artifact_version,
        }


RESULT_COLUMNS = list(MetricsReport(method="", dataset="", d=0, m=0, n_train=0, seed=0).to_row().keys())


def _paired(actual, predicted) -> Tuple[np.ndarray, np.ndarray]:
    actual = np.asarray(actual, dtype=float).ravel()
    predicted = np.asarray(predicted, dtype=float).ravel()
    if actual.shape != predicted.shape or actual.size == 0:
        raise InvalidArgumentError("actual and predicted must be non-empty and of equal length")
    return actual, predicted


def r_squared(actual: Sequence[float], predicted: Sequence[float], centered: bool = False) -> float:
    """
    Coefficient of determination.

    The default denominator is the raw second moment mean(f^2); centered=True
    switches to the conventional variance about the mean.
    """
    actual, predicted = _paired(actual, predicted)
    reference = actual - actual.mean() if centered else actual
    denominator = float(np.mean(reference**2))
    if denominator == 0.0:
        raise UndefinedMetricError("R^2 is undefined when the denominator is zero")
    return 1.0 - float(np.mean((actual - predicted) ** 2)) / denominator


def gaussian_log_density(mean: Sequence[float], std: Sequence[float]) -> LogDensityEvaluator:
    """Closed-form evaluator for independent Gaussian predictives."""
    mean = np.asarray(mean, dtype=float).ravel()
    std = np.asarray(std, dtype=float).ravel()
    if mean.shape != std.shape:
        raise InvalidArgumentError("mean and std must have equal length")
    if not np.all(std > 0):
        raise InvalidArgumentError("predictive standard deviations must be strictly positive")

    def evaluate(actual: np.ndarray, gamma: int = 1) -> np.ndarray:
        actual = np.asarray(actual, dtype=float).ravel()
        if actual.shape != mean.shape:
            raise InvalidArgumentError("actual values and predictions differ in length")
        return -0.5 * ((actual - mean) / std) ** 2 - np.log(std) - 0.5 * gamma * LOG_2PI

    return evaluate


def mlppd(actual: Sequence[float], predictive_logdensity: Union[LogDensityEvaluator, Any], gamma: int) -> float:
    """
    Mean log pointwise predictive density; accepts an evaluator or an object with `.log_density`.

    The constant is -(gamma/2) log 2 pi per point, so for gamma != 1 the values are
    not a proper univariate log density; compare them only at equal gamma.
    """
    actual = np.asarray(actual, dtype=float).ravel()
    if actual.size == 0:
        raise InvalidArgumentError("no validation points")
    if hasattr(predictive_logdensity, "log_density"):
        values = predictive_logdensity.log_density(actual, gamma)
    else:
        values = predictive_logdensity(actual, gamma)
    return float(np.mean(values))


def _orthonormal(W: Union[ProjectionMatrix, np.ndarray], name: str) -> np.ndarray:
    W = W.W if isinstance(W, ProjectionMatrix) else np.asarray(W, dtype=float)
    if W.ndim == 1:
        W = W.reshape(-1, 1)
    err = np.max(np.abs(W.T @ W - np.eye(W.shape[1])))
    if not err <= 1e-8:
        raise InvalidArgumentError(f"{name} is not orthonormal (max |W^T W - I| = {err:.3g})")
    return W


def principal_angles(U, V) -> SubspaceAngles:
    U = _orthonormal(U, "U")
    V = _orthonormal(V, "V")
    if U.shape[0] != V.shape[0]:
        raise InvalidArgumentError(f"U and V live in different spaces ({U.shape[0]} vs {V.shape[0]} rows)")
    # arccos of the clamped singular values of U^T V, switching to arcsin for
    # near-zero angles; scipy returns them largest first
    angles = np.clip(subspace_angles(U, V), 0.0, np.pi / 2)
    return SubspaceAngles(angles=angles)


def first_subspace_angles(posterior_Ws: Sequence, reference_W) -> np.ndarray:
    if len(posterior_Ws) == 0:
        raise InvalidArgumentError("need at least one posterior projection")
    return np.array([principal_angles(W, reference_W).first for W in posterior_Ws])


def mfsa(posterior_Ws: Sequence, reference_W) -> float:
    return float(np.mean(first_subspace_angles(posterior_Ws, reference_W)))


def subspace_angle_summary(posterior_Ws: Sequence, reference_W) -> Dict[str, float]:
    angles = first_subspace_angles(posterior_Ws, reference_W)
    q05, median, q95 = np.quantile(angles, [0.05, 0.5, 0.95])
    summary = {"mean": float(angles.mean()), "median": float(median), "q05": float(q05), "q95": float(q95)}
    summary.update({f"{key}_deg": float(np.degrees(value)) for key, value in list(summary.items())})
    summary["count"] = int(angles.size)
    return summary


class Timer:
    """Monotonic wall-clock timer usable as a context manager; nests freely."""

    def __init__(self):
        self.start: Optional[float] = None
        self.seconds = 0.0

    def __enter__(self) -> "Timer":
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc) -> None:
        self.seconds = max(0.0, time.perf_counter() - self.start)


def time_training(run: Callable[..., Any], *args, **kwargs) -> Tuple[Any, float]:
    """Call run(*args, **kwargs) and return (result, elapsed seconds)."""
    with Timer() as timer:
        result = run(*args, **kwargs)
    logger.debug("[Metrics] training took %.3fs", timer.seconds)
    return result, timer.seconds
