"""
transform.py - Standardization between original and model coordinates

Training-set statistics define an affine map for inputs (z-scoring per column)
and for the response (centering, then scaling by the training std). Validation
rows, prediction inputs and gradients are all pushed through the same constants,
and predictions are pulled back with the inverse.

    x_std = (x - x_mean) / x_scale
    y_std = (y - y_mean) / y_scale
    g_std = g * x_scale / y_scale        (chain rule)
"""

from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from errors import DataError, InvalidArgumentError


class Standardization(BaseModel):
    """Constants learned from a training set; all vectors have length d."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    y_scale: float

    @field_validator("x_mean", "x_scale", mode="before")
    @classmethod
    def _as_vector(cls, value):
        return np.atleast_1d(np.asarray(value, dtype=float))

    @property
    def d(self) -> int:
        return int(self.x_mean.shape[0])

    def to_dict(self) -> dict:
        return {
            "x_mean": self.x_mean.tolist(),
            "x_scale": self.x_scale.tolist(),
            "y_mean": self.y_mean,
            "y_scale": self.y_scale,
        }

    @classmethod
    def identity(cls, d: int) -> "Standardization":
        return cls(x_mean=np.zeros(d), x_scale=np.ones(d), y_mean=0.0, y_scale=1.0)


def fit_standardization(X: np.ndarray, y: np.ndarray, column_names: List[str] = None) -> Standardization:
    """
    Learn constants from training data.

    A zero-variance input column cannot be z-scored and raises DataError naming
    the column. A constant response keeps y_scale = 1 so it is only centered.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[0] != y.shape[0]:
        raise InvalidArgumentError("training set must be non-empty with len(y) == rows of X")
    x_mean = X.mean(axis=0)
    x_scale = X.std(axis=0)
    for j, scale in enumerate(x_scale):
        if not scale > 0.0:
            name = column_names[j] if column_names else f"x{j}"
            raise DataError("input column has zero variance in the training set", column=name)
    y_mean = float(y.mean())
    y_scale = float(y.std())
    if not y_scale > 0.0:
        y_scale = 1.0
    return Standardization(x_mean=x_mean, x_scale=x_scale, y_mean=y_mean, y_scale=y_scale)


def _check_columns(std: Standardization, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != std.d:
        raise DataError(f"expected {std.d} input columns, got {X.shape[1]}")
    return X


def transform_inputs(std: Standardization, X: np.ndarray) -> np.ndarray:
    return (_check_columns(std, X) - std.x_mean) / std.x_scale


def inverse_transform_inputs(std: Standardization, X_std: np.ndarray) -> np.ndarray:
    return _check_columns(std, X_std) * std.x_scale + std.x_mean


def transform_y(std: Standardization, y: np.ndarray) -> np.ndarray:
    return (np.asarray(y, dtype=float) - std.y_mean) / std.y_scale


def destandardize_y(std: Standardization, y_std: np.ndarray) -> np.ndarray:
    return np.asarray(y_std, dtype=float) * std.y_scale + std.y_mean


def destandardize_std(std: Standardization, sd: np.ndarray) -> np.ndarray:
    """Scale a predictive standard deviation back to original units (no shift)."""
    return np.asarray(sd, dtype=float) * std.y_scale


def transform_gradients(std: Standardization, G: np.ndarray) -> np.ndarray:
    """Gradients with respect to original inputs -> gradients of y_std with respect to x_std."""
    G = _check_columns(std, G)
    return G * std.x_scale / std.y_scale


def standardize(split) -> Tuple[object, Standardization]:
    """
    Standardize a SplitDataset with training-set statistics only.

    Returns (standardized SplitDataset, constants). Gradients stay in original
    coordinates on the returned datasets; use `transform_gradients` when a
    reference subspace is needed in standardized coordinates.
    """
    train = split.train
    std = fit_standardization(train.X, train.y, train.column_names())

    def apply(ds):
        return ds.model_copy(
            update={
                "X": transform_inputs(std, ds.X),
                "y": transform_y(std, ds.y),
                "name": ds.name,
            }
        )

    standardized = split.model_copy(update={"train": apply(train), "validation": apply(split.validation)})
    return standardized, std


def standardize_dataset(ds) -> Tuple[object, Standardization]:
    """Fit constants on a single (training) Dataset and return it standardized."""
    std = fit_standardization(ds.X, ds.y, ds.column_names())
    return ds.model_copy(update={"X": transform_inputs(std, ds.X), "y": transform_y(std, ds.y)}), std
