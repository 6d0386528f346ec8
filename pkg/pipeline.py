"""
pipeline.py - Train / predict / evaluate one run, shared by cli, server and walkthrough

FLOW:
1. resolve_dataset: load a file or generate a quadratic benchmark
2. split + standardize with training statistics
3. train_model: BAS, MO-AS or B-GP on standardized data (timed)
4. predict_model / evaluate_model: predictions in original units and one
   MetricsReport row (R^2, MLPPD, MFSA, training seconds)

Model files are self-contained: they carry the standardization constants and the
training data in original units, so prediction needs nothing else.
"""

import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, ValidationError, model_validator

from baselines import (
    MOASModel,
    bgp_estimate_subspace,
    bgp_predict,
    bgp_train,
    moas_from_dict,
    moas_predict,
    moas_to_dict,
    moas_train,
    reference_subspace_from_gradients,
    save_moas,
)
from config import ARTIFACT_VERSION, BGP_CONFIG, MOAS_CONFIG, PREDICT_CONFIG, SAMPLER_CONFIG, config_hash
from data import Dataset, generate_quadratic, load_dataset, split
from errors import DataError, SurrogateError, UsageError
from metrics import RESULT_COLUMNS, MetricsReport, mfsa, mlppd, r_squared, time_training
from model import (
    MarginalPrediction,
    PosteriorSamples,
    posterior_from_dict,
    posterior_projections,
    posterior_to_dict,
    predict_marginal,
    save_posterior,
    train_bas,
)
from sampler import SamplerConfig, summarize_rhat
from transform import Standardization, standardize_dataset, transform_gradients, transform_inputs, transform_y

logger = logging.getLogger(__name__)

METHODS = ("bas", "moas", "bgp")

Model = Union[PosteriorSamples, MOASModel]


class GeneratorSpec(BaseModel):
    """Quadratic benchmark drawn on the fly instead of a dataset file."""

    d: int
    m: int
    n: int
    seed: int = 0
    noise_std: Optional[float] = None


class SamplerSettings(BaseModel):
    chains: int = Field(default_factory=lambda: SAMPLER_CONFIG["chains"])
    draws: int = Field(default_factory=lambda: SAMPLER_CONFIG["draws"])
    warmup: int = Field(default_factory=lambda: SAMPLER_CONFIG["warmup"])
    target_accept: float = Field(default_factory=lambda: SAMPLER_CONFIG["target_accept"])
    max_tree_depth: int = Field(default_factory=lambda: SAMPLER_CONFIG["max_tree_depth"])

    def for_seed(self, seed: int) -> SamplerConfig:
        return SamplerConfig(seed=seed, **self.model_dump())


class RunConfig(BaseModel):
    method: str
    dataset: Optional[str] = None
    generator: Optional[GeneratorSpec] = None
    m: int
    n_train: int
    seed: int = 0
    sampler: SamplerSettings = Field(default_factory=SamplerSettings)
    moas_restarts: int = Field(default_factory=lambda: MOAS_CONFIG["restarts"])
    moas_max_iterations: int = Field(default_factory=lambda: MOAS_CONFIG["max_iterations"])
    bgp_n_grad: int = Field(default_factory=lambda: BGP_CONFIG["n_grad"])
    bgp_thin_draws: int = Field(default_factory=lambda: BGP_CONFIG["thin_draws"])
    draws_per_sample: int = Field(default_factory=lambda: PREDICT_CONFIG["draws_per_sample"])
    output_dir: Optional[str] = None

    @model_validator(mode="after")
    def _check(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got '{self.method}'")
        if (self.dataset is None) == (self.generator is None):
            raise ValueError("give exactly one of dataset or generator")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.n_train < self.m + 2:
            raise ValueError(f"n_train must be >= m + 2 = {self.m + 2}")
        if self.method == "moas" and self.moas_restarts < 1:
            raise ValueError("moas_restarts must be >= 1")
        if self.method == "bgp" and (self.bgp_n_grad < 1 or self.bgp_thin_draws < 1):
            raise ValueError("bgp_n_grad and bgp_thin_draws must be >= 1")
        return self

    def hash(self) -> str:
        return config_hash(self.model_dump(mode="json"))


def gamma_for(method: str, d: int, m: int) -> int:
    """Dimension scaling the Gaussian constant in MLPPD: m for projected models, d for B-GP."""
    return d if method == "bgp" else m


def resolve_dataset(cfg: RunConfig) -> Dataset:
    if cfg.dataset is not None:
        return load_dataset(cfg.dataset)
    g = cfg.generator
    ds, _ = generate_quadratic(g.d, g.m, g.n, g.seed, g.noise_std)
    return ds


def _standardized_training(model: Model) -> Tuple[np.ndarray, np.ndarray, Standardization]:
    std = model.standardization
    if model.X_train is None or std is None:
        raise DataError("model file carries no training data; cannot predict")
    return transform_inputs(std, model.X_train), transform_y(std, model.y_train), std


def train_model(cfg: RunConfig, train: Dataset) -> Tuple[Model, Standardization, np.ndarray, np.ndarray]:
    """
    Train on an original-units training set.

    Returns (model, standardization, X_std, y_std); the model records its own
    training duration, config hash and training data.
    """
    train_std, std = standardize_dataset(train)
    X, y = train_std.X, train_std.y
    if cfg.m > train.d:
        raise UsageError(f"m={cfg.m} exceeds the input dimension d={train.d}")
    sampler_cfg = cfg.sampler.for_seed(cfg.seed)
    if cfg.method == "bas":
        model, seconds = time_training(train_bas, X, y, cfg.m, sampler_cfg, std)
    elif cfg.method == "bgp":
        model, seconds = time_training(bgp_train, X, y, sampler_cfg, cfg.m, std)
    else:
        model, seconds = time_training(
            moas_train, X, y, cfg.m, restarts=cfg.moas_restarts, seed=cfg.seed,
            max_iterations=cfg.moas_max_iterations,
        )
    model = model.model_copy(
        update={
            "training_seconds": seconds,
            "config_hash": cfg.hash(),
            "standardization": std,
            "X_train": train.X,
            "y_train": train.y,
        }
    )
    logger.info("[Pipeline] trained %s in %.2fs (hash %s)", cfg.method, seconds, cfg.hash()[:12])
    return model, std, X, y


def model_kind(model: Model) -> str:
    return "moas" if isinstance(model, MOASModel) else model.kind


def predict_model(
    model: Model, X_star: np.ndarray, draws_per_sample: Optional[int] = None, seed: int = 0
) -> MarginalPrediction:
    """Predictive summaries at original-units inputs, returned in original units."""
    X, y, std = _standardized_training(model)
    X_star_std = transform_inputs(std, X_star)
    if isinstance(model, MOASModel):
        pred = moas_predict(model, X, y, X_star_std)
    elif model.kind == "bgp":
        pred = bgp_predict(model, X, y, X_star_std, draws_per_sample=draws_per_sample, seed=seed)
    else:
        pred = predict_marginal(model, X_star_std, X, y, draws_per_sample=draws_per_sample, seed=seed)
    return pred.destandardize(std)


def model_projections(model: Model, n_grad: Optional[int] = None, thin_draws: Optional[int] = None, seed: int = 0):
    """Projection matrices (standardized coordinates) the model implies."""
    if isinstance(model, MOASModel):
        return [model.W]
    if model.kind == "bas":
        return posterior_projections(model)
    X, y, _ = _standardized_training(model)
    return bgp_estimate_subspace(model, X, y, n_grad=n_grad, m=model.m, seed=seed, thin_draws=thin_draws).projections


def evaluate_model(
    model: Model,
    validation: Dataset,
    dataset_name: str,
    seed: int,
    reference_gradients: Optional[np.ndarray] = None,
    draws_per_sample: Optional[int] = None,
    n_grad: Optional[int] = None,
    thin_draws: Optional[int] = None,
) -> MetricsReport:
    """
    R^2 on the predictive median, MLPPD in original units, and MFSA when gradient
    samples (original coordinates) are available.
    """
    kind = model_kind(model)
    d, m = model.d, model.m
    if validation.d != d:
        raise DataError(f"dataset has d={validation.d} but the model was trained with d={d}")
    pred = predict_model(model, validation.X, draws_per_sample=draws_per_sample, seed=seed)
    report = MetricsReport(
        method=kind,
        dataset=dataset_name,
        d=d,
        m=m,
        n_train=int(model.X_train.shape[0]),
        seed=seed,
        r_squared=r_squared(validation.y, pred.median),
        mlppd=mlppd(validation.y, pred, gamma_for(kind, d, m)),
        training_seconds=model.training_seconds,
        config_hash=model.config_hash,
    )
    if reference_gradients is not None:
        G_std = transform_gradients(model.standardization, reference_gradients)
        _, reference = reference_subspace_from_gradients(G_std, m)
        Ws = model_projections(model, n_grad=n_grad, thin_draws=thin_draws, seed=seed)
        report = report.model_copy(update={"mfsa": mfsa(Ws, reference)})
    logger.info(
        "[Pipeline] %s on %s: R2=%.4f MLPPD=%.4f MFSA=%s",
        kind, dataset_name, report.r_squared, report.mlppd,
        "n/a" if report.mfsa is None else f"{report.mfsa:.4f}",
    )
    return report


def run_cell(cfg: RunConfig, output_dir: Optional[Path] = None) -> Tuple[MetricsReport, Optional[Model]]:
    """Full run for one configuration; writes model and diagnostics when output_dir is set."""
    ds = resolve_dataset(cfg)
    parts = split(ds, cfg.n_train, cfg.seed)
    model, _, _, _ = train_model(cfg, parts.train)
    report = evaluate_model(
        model,
        parts.validation,
        ds.name,
        cfg.seed,
        reference_gradients=ds.gradients,
        draws_per_sample=cfg.draws_per_sample,
        n_grad=cfg.bgp_n_grad,
        thin_draws=cfg.bgp_thin_draws,
    )
    if output_dir is not None:
        output_dir.mkdir(parents=True, exist_ok=True)
        save_model(model, output_dir / "model.json")
        write_json(diagnostics_payload(model), output_dir / "diagnostics.json")
    return report, model


# ---------------------------
# Files
# ---------------------------


def save_model(model: Model, path: Union[str, Path]) -> None:
    if isinstance(model, MOASModel):
        save_moas(model, path)
    else:
        save_posterior(model, path)


def model_from_dict(payload: Dict[str, Any]) -> Model:
    kind = payload.get("meta", {}).get("kind")
    if kind == "moas":
        return moas_from_dict(payload)
    if kind in ("bas", "bgp"):
        return posterior_from_dict(payload)
    raise DataError(f"unknown model kind '{kind}'")


def load_model(path: Union[str, Path]) -> Model:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"model file not found: {path}")
    except json.JSONDecodeError as e:
        raise DataError(f"{path} is not valid JSON: {e}")
    return model_from_dict(payload)


def model_to_dict(model: Model) -> Dict[str, Any]:
    return moas_to_dict(model) if isinstance(model, MOASModel) else posterior_to_dict(model)


def diagnostics_payload(model: Model) -> Dict[str, Any]:
    payload: Dict[str, Any] = {
        "artifact_version": ARTIFACT_VERSION,
        "config_hash": model.config_hash,
        "method": model_kind(model),
        "training_seconds": model.training_seconds,
    }
    if isinstance(model, MOASModel):
        payload.update(
            {
                "restarts_used": model.restarts_used,
                "best_restart": model.best_restart,
                "best_loglik": model.best_loglik,
                "failure_counts": model.failure_counts,
                "gradient_norm": model.gradient_norm,
                "hit_max_iterations": model.hit_max_iterations,
                "iterations": model.iterations,
            }
        )
        return payload
    diag = model.diagnostics
    names = model.parameter_names()
    rhat = diag.split_rhat if diag else summarize_rhat(model.chains).tolist()
    finite = [r for r in rhat if np.isfinite(r)]
    payload.update(
        {
            "chains": model.n_chains,
            "draws": model.n_draws,
            "warmup": model.warmup,
            "split_rhat": dict(zip(names, rhat)),
            "split_rhat_max": max(finite) if finite else None,
            "split_rhat_median": float(np.median(finite)) if finite else None,
            "acceptance_rate": diag.acceptance_rate if diag else None,
            "divergence_count": diag.divergence_count if diag else None,
            "step_size": diag.step_size if diag else None,
            "max_depth_hits": diag.max_depth_hits if diag else None,
            "mean_tree_depth": diag.mean_tree_depth if diag else None,
        }
    )
    return payload


def write_json(payload: Dict[str, Any], path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(payload, indent=2), encoding="utf-8")


def write_csv(frame: pd.DataFrame, path: Union[str, Path], metadata: Dict[str, Any], mode: str = "w") -> None:
    """CSV preceded by '# key: value' provenance lines."""
    with open(path, mode, encoding="utf-8", newline="") as handle:
        for key, value in metadata.items():
            handle.write(f"# {key}: {value}\n")
        frame.to_csv(handle, index=False, float_format="%.17g")


def read_csv(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def prediction_frame(pred: MarginalPrediction) -> pd.DataFrame:
    return pd.DataFrame(
        {"median": pred.median, "mean": pred.mean, "std": pred.std, "q05": pred.q05, "q95": pred.q95}
    )


# ---------------------------
# Sweeps
# ---------------------------


class SweepConfig(BaseModel):
    """Cross product of methods x training sizes x seeds on one dataset."""

    methods: List[str]
    dataset: Optional[str] = None
    generator: Optional[GeneratorSpec] = None
    m: int
    n_train: Optional[List[int]] = None
    n_multiples: List[int] = [1, 2, 3, 4, 5]  # used when n_train is absent: n = multiple * d
    seeds: List[int] = [0]
    sampler: SamplerSettings = Field(default_factory=SamplerSettings)
    moas_restarts: int = Field(default_factory=lambda: MOAS_CONFIG["restarts"])
    moas_max_iterations: int = Field(default_factory=lambda: MOAS_CONFIG["max_iterations"])
    bgp_n_grad: int = Field(default_factory=lambda: BGP_CONFIG["n_grad"])
    bgp_thin_draws: int = Field(default_factory=lambda: BGP_CONFIG["thin_draws"])
    draws_per_sample: int = Field(default_factory=lambda: PREDICT_CONFIG["draws_per_sample"])
    output_dir: str = "sweep_output"
    workers: int = 1
    resume: bool = True

    @model_validator(mode="after")
    def _check(self):
        if not self.methods:
            raise ValueError("methods must not be empty")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; choose from {METHODS}")
        if not self.seeds:
            raise ValueError("seeds must not be empty")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        return self

    def input_dimension(self) -> int:
        if self.generator is not None:
            return self.generator.d
        header = pd.read_csv(self.dataset, nrows=0).columns if not str(self.dataset).endswith(".xlsx") else None
        if header is None:
            return load_dataset(self.dataset).d
        return sum(1 for c in header if str(c).strip().startswith("x"))

    def cells(self) -> List[RunConfig]:
        sizes = self.n_train or [k * self.input_dimension() for k in self.n_multiples]
        shared = self.model_dump(
            include={
                "dataset", "generator", "m", "sampler", "moas_restarts", "moas_max_iterations",
                "bgp_n_grad", "bgp_thin_draws", "draws_per_sample",
            }
        )
        return [
            RunConfig(method=method, n_train=n, seed=seed, **shared)
            for method in self.methods
            for n in sizes
            for seed in self.seeds
        ]


def _failed_row(cfg: RunConfig, dataset_name: str, d: int, error: Exception) -> Dict[str, Any]:
    report = MetricsReport(
        method=cfg.method, dataset=dataset_name, d=d, m=cfg.m, n_train=cfg.n_train, seed=cfg.seed,
        status=f"failed: {type(error).__name__}: {error}", config_hash=cfg.hash(),
    )
    return report.to_row()


def _run_sweep_cell(cfg: RunConfig, dataset_name: str, d: int, output_dir: Path) -> Dict[str, Any]:
    try:
        report, _ = run_cell(cfg, output_dir / "cells" / cfg.hash()[:16])
        return report.to_row()
    except (SurrogateError, ValidationError, np.linalg.LinAlgError, FloatingPointError, OverflowError) as e:
        logger.warning("[Sweep] cell %s/n=%d/seed=%d failed: %s", cfg.method, cfg.n_train, cfg.seed, e)
        return _failed_row(cfg, dataset_name, d, e)


def summarize_results(results: pd.DataFrame) -> pd.DataFrame:
    """Median and quartiles across seeds for every (method, dataset, d, m, n_train) cell."""
    ok = results[results["status"] == "ok"]
    keys = ["method", "dataset", "d", "m", "n_train"]
    metrics = ["r_squared", "mlppd", "mfsa_rad", "training_seconds"]
    if ok.empty:
        return pd.DataFrame(columns=keys + ["seeds"])
    grouped = ok.groupby(keys, sort=True)
    frames = [grouped.size().rename("seeds")]
    for metric in metrics:
        values = pd.to_numeric(ok[metric], errors="coerce").groupby([ok[k] for k in keys])
        frames.append(values.median().rename(f"{metric}_median"))
        frames.append(values.quantile(0.25).rename(f"{metric}_q25"))
        frames.append(values.quantile(0.75).rename(f"{metric}_q75"))
    return pd.concat(frames, axis=1).reset_index()


def run_sweep(sweep: SweepConfig) -> pd.DataFrame:
    """
    Run every cell, resuming from rows already in results.csv (matched by config hash).

    Rows are appended as cells finish; the final results.csv is rewritten in cell
    order so reruns are comparable row by row.
    """
    out = Path(sweep.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    results_path = out / "results.csv"
    cells = sweep.cells()
    probe = resolve_dataset(cells[0])
    dataset_name, d = probe.name, probe.d
    sweep_hash = config_hash(sweep.model_dump(mode="json"))
    metadata = {"config_hash": sweep_hash, "artifact_version": ARTIFACT_VERSION}

    done: Dict[str, Dict[str, Any]] = {}
    if sweep.resume and results_path.exists():
        previous = read_csv(results_path)
        for row in previous.to_dict(orient="records"):
            if row.get("status") == "ok":
                done[row["config_hash"]] = row
        logger.info("[Sweep] resuming: %d of %d cells already complete", len(done), len(cells))
    else:
        write_csv(pd.DataFrame(columns=RESULT_COLUMNS), results_path, metadata)

    pending = [cfg for cfg in cells if cfg.hash() not in done]
    lock = threading.Lock()

    def run(cfg: RunConfig) -> Dict[str, Any]:
        row = _run_sweep_cell(cfg, dataset_name, d, out)
        with lock:
            pd.DataFrame([row], columns=RESULT_COLUMNS).to_csv(
                results_path, mode="a", header=False, index=False, float_format="%.17g"
            )
        return row

    logger.info("[Sweep] %d cells to run with %d worker(s)", len(pending), sweep.workers)
    if sweep.workers > 1 and len(pending) > 1:
        with ThreadPoolExecutor(max_workers=sweep.workers) as pool:
            fresh = list(pool.map(run, pending))
    else:
        fresh = [run(cfg) for cfg in pending]
    for cfg, row in zip(pending, fresh):
        done[cfg.hash()] = row

    results = pd.DataFrame([done[cfg.hash()] for cfg in cells], columns=RESULT_COLUMNS)
    write_csv(results, results_path, metadata)
    write_csv(summarize_results(results), out / "summary.csv", metadata)
    failed = int((results["status"] != "ok").sum())
    logger.info("[Sweep] finished: %d ok, %d failed", len(results) - failed, failed)
    return results
