"""
data.py - Datasets: quadratic benchmark generation, file ingestion, splitting

DATASET FILE FORMAT (CSV, UTF-8, comma separated):
    x0,x1,...,x{d-1},y[,g0,...,g{d-1}]
The optional g columns hold the gradient of y with respect to the original inputs.
`.xlsx` workbooks are read from their first worksheet with the same header.

QUADRATIC BENCHMARK:
    z = W^T x,  f(x) = z^T A z + b^T z + c + eps,  eps ~ N(0, noise_std^2)
A, b, c are standard normal, W is Haar distributed (Householder map of Gaussian
parameters) and x is uniform on [-1, 1]^d. The spec JSON stores everything
needed to regenerate X, y and the gradients bit for bit.
"""

import io
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from config import QUADRATIC_CONFIG
from errors import DataError, InvalidArgumentError
from stiefel import householder_matrix, n_params

try:
    import openpyxl
except ImportError:
    openpyxl = None

logger = logging.getLogger(__name__)


class Dataset(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    X: np.ndarray
    y: np.ndarray
    gradients: Optional[np.ndarray] = None
    name: str = "dataset"

    @field_validator("X", mode="before")
    @classmethod
    def _as_matrix(cls, value):
        X = np.asarray(value, dtype=float)
        return X.reshape(-1, 1) if X.ndim == 1 else X

    @field_validator("y", mode="before")
    @classmethod
    def _as_vector(cls, value):
        return np.asarray(value, dtype=float).ravel()

    @field_validator("gradients", mode="before")
    @classmethod
    def _as_gradient_matrix(cls, value):
        if value is None:
            return None
        G = np.asarray(value, dtype=float)
        return G.reshape(-1, 1) if G.ndim == 1 else G

    @model_validator(mode="after")
    def _check(self):
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError(f"X must be n x d with n = len(y), got {self.X.shape} and {self.y.shape}")
        if self.gradients is not None and self.gradients.shape != self.X.shape:
            raise ValueError(f"gradients must have X's shape {self.X.shape}, got {self.gradients.shape}")
        for label, arr in (("X", self.X), ("y", self.y), ("gradients", self.gradients)):
            if arr is not None and not np.all(np.isfinite(arr)):
                raise ValueError(f"{label} contains NaN or Inf")
        return self

    @property
    def n(self) -> int:
        return int(self.X.shape[0])

    @property
    def d(self) -> int:
        return int(self.X.shape[1])

    def column_names(self) -> List[str]:
        return [f"x{j}" for j in range(self.d)]

    def subset(self, index: np.ndarray, name: str = None) -> "Dataset":
        return Dataset(
            X=self.X[index],
            y=self.y[index],
            gradients=None if self.gradients is None else self.gradients[index],
            name=name or self.name,
        )


class QuadraticSpec(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    d: int
    m: int
    W: np.ndarray
    A: np.ndarray
    b: np.ndarray
    c: float
    noise_std: float = QUADRATIC_CONFIG["noise_std"]
    seed: int = 0
    input_bounds: Tuple[float, float] = QUADRATIC_CONFIG["input_bounds"]

    @field_validator("W", "A", mode="before")
    @classmethod
    def _as_matrix(cls, value):
        M = np.asarray(value, dtype=float)
        return M.reshape(-1, 1) if M.ndim == 1 else M

    @field_validator("b", mode="before")
    @classmethod
    def _as_vector(cls, value):
        return np.atleast_1d(np.asarray(value, dtype=float))

    @model_validator(mode="after")
    def _check(self):
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.W.shape != (self.d, self.m) or self.A.shape != (self.m, self.m) or self.b.shape != (self.m,):
            raise ValueError("W, A, b shapes do not match d and m")
        if np.max(np.abs(self.W.T @ self.W - np.eye(self.m))) > 1e-8:
            raise ValueError("W is not orthonormal")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {
            "d": self.d,
            "m": self.m,
            "W": self.W.tolist(),
            "A": self.A.tolist(),
            "b": self.b.tolist(),
            "c": self.c,
            "noise_std": self.noise_std,
            "seed": self.seed,
            "input_bounds": list(self.input_bounds),
        }


class SplitDataset(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    train: Dataset
    validation: Dataset
    train_index: np.ndarray
    validation_index: np.ndarray


# ---------------------------
# Quadratic benchmark
# ---------------------------


def quadratic_value(spec: QuadraticSpec, X: np.ndarray) -> np.ndarray:
    """Noise-free f(x) for every row of X."""
    Z = np.asarray(X, dtype=float) @ spec.W
    return np.einsum("ij,jk,ik->i", Z, spec.A, Z) + Z @ spec.b + spec.c


def quadratic_gradient(spec: QuadraticSpec, X: np.ndarray) -> np.ndarray:
    """grad f = W (2 A_sym z + b), one row per input."""
    Z = np.asarray(X, dtype=float) @ spec.W
    A_sym = 0.5 * (spec.A + spec.A.T)
    return (2.0 * Z @ A_sym + spec.b) @ spec.W.T


def _dataset_name(spec: QuadraticSpec) -> str:
    lo, hi = spec.input_bounds
    return f"quadratic_d{spec.d}_m{spec.m}_seed{spec.seed}_uniform[{lo:g},{hi:g}]"


def regenerate_quadratic(spec: QuadraticSpec, n: int) -> Dataset:
    """Draw n inputs and responses from a stored spec; deterministic in spec.seed."""
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    lo, hi = spec.input_bounds
    X = np.random.default_rng([spec.seed, 1]).uniform(lo, hi, size=(n, spec.d))
    noise = np.random.default_rng([spec.seed, 2]).standard_normal(n) * spec.noise_std
    y = quadratic_value(spec, X) + noise
    return Dataset(X=X, y=y, gradients=quadratic_gradient(spec, X), name=_dataset_name(spec))


def generate_quadratic(
    d: int, m: int, n: int, seed: int, noise_std: Optional[float] = None
) -> Tuple[Dataset, QuadraticSpec]:
    if m < 1 or d < m or n < 1:
        raise InvalidArgumentError(f"need d >= m >= 1 and n >= 1, got d={d}, m={m}, n={n}")
    noise_std = QUADRATIC_CONFIG["noise_std"] if noise_std is None else float(noise_std)
    if noise_std < 0:
        raise InvalidArgumentError("noise_std must be >= 0")
    rng = np.random.default_rng([seed, 0])
    W = householder_matrix(rng.standard_normal(n_params(d, m)), d, m)
    A = rng.standard_normal((m, m))
    b = rng.standard_normal(m)
    c = float(rng.standard_normal())
    spec = QuadraticSpec(d=d, m=m, W=W, A=A, b=b, c=c, noise_std=noise_std, seed=seed)
    logger.info("[Data] generated quadratic d=%d m=%d n=%d seed=%d noise=%g", d, m, n, seed, noise_std)
    return regenerate_quadratic(spec, n), spec


def save_quadratic_spec(spec: QuadraticSpec, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2), encoding="utf-8")


def load_quadratic_spec(path: Union[str, Path]) -> QuadraticSpec:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return QuadraticSpec(**payload)
    except (json.JSONDecodeError, TypeError, ValueError) as e:
        raise DataError(f"invalid quadratic spec file {path}: {e}")


# ---------------------------
# File ingestion
# ---------------------------


def _header_layout(columns: List[str], has_gradients: Optional[bool]) -> Tuple[int, bool]:
    columns = [str(c).strip() for c in columns]
    if "y" not in columns:
        raise DataError("missing y column", column="y")
    d = columns.index("y")
    expected = [f"x{j}" for j in range(d)] + ["y"]
    if d < 1 or columns[: d + 1] != expected:
        raise DataError(f"header must start with {','.join(expected)}, got {','.join(columns[: d + 1])}")
    rest = columns[d + 1:]
    gradient_cols = [f"g{j}" for j in range(d)]
    if rest and rest != gradient_cols:
        raise DataError(f"trailing columns must be {','.join(gradient_cols)}, got {','.join(rest)}")
    present = bool(rest)
    if has_gradients and not present:
        raise DataError("gradient columns requested but not present", column="g0")
    return d, present and has_gradients is not False


def dataset_from_frame(frame: pd.DataFrame, name: str, has_gradients: Optional[bool] = None) -> Dataset:
    """
    Validate a raw (string or object typed) table and build a Dataset.

    has_gradients: None detects g columns, True requires them, False ignores them.
    Row numbers in errors are file line numbers (the header is line 1).
    """
    d, use_gradients = _header_layout(list(frame.columns), has_gradients)
    frame.columns = [str(c).strip() for c in frame.columns]
    if len(frame) == 0:
        raise DataError("dataset has no rows")
    wanted = [f"x{j}" for j in range(d)] + ["y"] + ([f"g{j}" for j in range(d)] if use_gradients else [])
    values = np.empty((len(frame), len(wanted)))
    for k, col in enumerate(wanted):
        raw = frame[col]
        numeric = pd.to_numeric(raw, errors="coerce").to_numpy(dtype=float)
        bad = np.flatnonzero(~np.isfinite(numeric))
        if bad.size:
            i = int(bad[0])
            cell = raw.iloc[i]
            shown = "" if cell is None or (isinstance(cell, float) and np.isnan(cell)) else str(cell)
            raise DataError(f"non-numeric, missing or non-finite value '{shown}'", row=i + 2, column=col)
        values[:, k] = numeric
    G = values[:, d + 1:] if use_gradients else None
    logger.info("[Data] loaded %s: n=%d d=%d gradients=%s", name, len(frame), d, G is not None)
    return Dataset(X=values[:, :d], y=values[:, d], gradients=G, name=name)


def _read_csv(source, name: str) -> pd.DataFrame:
    try:
        return pd.read_csv(source, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.ParserError as e:
        # pandas reports ragged rows as "Expected N fields in line L, saw M"
        raise DataError(f"ragged or malformed CSV in {name}: {e}")
    except pd.errors.EmptyDataError:
        raise DataError(f"{name} is empty")
    except UnicodeDecodeError as e:
        raise DataError(f"{name} is not valid UTF-8: {e}")


def _read_xlsx(source, name: str) -> pd.DataFrame:
    if not openpyxl:
        raise DataError("openpyxl not installed; cannot read .xlsx datasets")
    workbook = openpyxl.load_workbook(source, read_only=True, data_only=True)
    sheet = workbook.worksheets[0]
    rows = [row for row in sheet.iter_rows(values_only=True) if any(cell is not None for cell in row)]
    logger.debug("[Data] sheet '%s' of %s: %d non-empty rows", sheet.title, name, len(rows))
    if not rows:
        raise DataError(f"{name} is empty")
    header = [("" if cell is None else str(cell)) for cell in rows[0]]
    while header and header[-1] == "":
        header.pop()
    body = [list(row[: len(header)]) + [None] * max(0, len(header) - len(row)) for row in rows[1:]]
    for i, row in enumerate(body):
        extra = [cell for cell in rows[i + 1][len(header):] if cell is not None]
        if extra:
            raise DataError("row has more cells than the header", row=i + 2)
    return pd.DataFrame(body, columns=header, dtype=object)


def load_dataset(path: Union[str, Path], has_gradients: Optional[bool] = None) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    if path.suffix.lower() == ".xlsx":
        frame = _read_xlsx(path, path.name)
    else:
        frame = _read_csv(path, path.name)
    return dataset_from_frame(frame, path.stem, has_gradients)


def load_dataset_bytes(content: bytes, filename: str, has_gradients: Optional[bool] = None) -> Dataset:
    """Same as `load_dataset` for uploaded file contents."""
    name = Path(filename or "upload.csv")
    if name.suffix.lower() == ".xlsx":
        frame = _read_xlsx(io.BytesIO(content), name.name)
    else:
        try:
            text = content.decode("utf-8")
        except UnicodeDecodeError as e:
            raise DataError(f"{name.name} is not valid UTF-8: {e}")
        frame = _read_csv(io.StringIO(text), name.name)
    return dataset_from_frame(frame, name.stem, has_gradients)


def read_inputs(path_or_frame, d: int) -> np.ndarray:
    """Prediction inputs: a CSV with at least columns x0..x{d-1}; other columns are ignored."""
    frame = path_or_frame if isinstance(path_or_frame, pd.DataFrame) else _read_csv(path_or_frame, str(path_or_frame))
    frame.columns = [str(c).strip() for c in frame.columns]
    out = np.empty((len(frame), d))
    for j in range(d):
        col = f"x{j}"
        if col not in frame.columns:
            raise DataError("missing input column", column=col)
        numeric = pd.to_numeric(frame[col], errors="coerce").to_numpy(dtype=float)
        bad = np.flatnonzero(~np.isfinite(numeric))
        if bad.size:
            raise DataError(f"non-numeric value '{frame[col].iloc[int(bad[0])]}'", row=int(bad[0]) + 2, column=col)
        out[:, j] = numeric
    return out


def save_dataset(ds: Dataset, path: Union[str, Path]) -> None:
    columns = {f"x{j}": ds.X[:, j] for j in range(ds.d)}
    columns["y"] = ds.y
    if ds.gradients is not None:
        columns.update({f"g{j}": ds.gradients[:, j] for j in range(ds.d)})
    pd.DataFrame(columns).to_csv(path, index=False, float_format="%.17g")


# ---------------------------
# Splitting
# ---------------------------


def split(ds: Dataset, n_train: int, seed: int) -> SplitDataset:
    """Uniformly random disjoint train/validation partition, deterministic in seed."""
    if not 1 <= n_train < ds.n:
        raise InvalidArgumentError(f"n_train must satisfy 1 <= n_train < {ds.n}, got {n_train}")
    perm = np.random.default_rng(seed).permutation(ds.n)
    train_index = np.sort(perm[:n_train])
    validation_index = np.sort(perm[n_train:])
    return SplitDataset(
        train=ds.subset(train_index),
        validation=ds.subset(validation_index),
        train_index=train_index,
        validation_index=validation_index,
    )
