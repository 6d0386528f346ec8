"""
walkthrough.py - Scripted BAS walk-through producing CSV artifacts per cell

For every (m, n_train) cell of a manifest: train BAS, then write
    chains.csv               draws of the first few projection parameters and all hyperparameters
    rhat.csv                 split R-hat for every sampled parameter
    histograms.csv           posterior counts beside the N(0, 1) prior density per bin
    actual_vs_predicted.csv  training and validation rows with median and 5/95% quantiles
    model.json, diagnostics.json
Each file carries the cell's metadata. A failing cell is recorded in
walkthrough_index.csv and the remaining cells still run.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, ValidationError, model_validator
from scipy.stats import norm

from config import ARTIFACT_VERSION
from data import split
from errors import DataError, SurrogateError
from pipeline import (
    GeneratorSpec,
    RunConfig,
    SamplerSettings,
    diagnostics_payload,
    predict_model,
    resolve_dataset,
    save_model,
    train_model,
    write_csv,
    write_json,
)
from sampler import summarize_rhat

logger = logging.getLogger(__name__)


class WalkthroughCell(BaseModel):
    m: int
    n_train: int


class WalkthroughManifest(BaseModel):
    dataset: Optional[str] = None
    generator: Optional[GeneratorSpec] = None
    cells: List[WalkthroughCell]
    sampler: SamplerSettings = Field(default_factory=SamplerSettings)
    seed: int = 0
    draws_per_sample: int = 10
    chain_projection_params: int = 5
    histogram_bins: int = 30
    workers: int = 1
    notes: Dict[str, str] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check(self):
        if not self.cells:
            raise ValueError("manifest needs at least one cell")
        if (self.dataset is None) == (self.generator is None):
            raise ValueError("give exactly one of dataset or generator")
        if self.chain_projection_params < 0 or self.histogram_bins < 1:
            raise ValueError("chain_projection_params must be >= 0 and histogram_bins >= 1")
        return self

    def run_config(self, cell: WalkthroughCell) -> RunConfig:
        return RunConfig(
            method="bas",
            dataset=self.dataset,
            generator=self.generator,
            m=cell.m,
            n_train=cell.n_train,
            seed=self.seed,
            sampler=self.sampler,
            draws_per_sample=self.draws_per_sample,
        )


class CellResult(BaseModel):
    m: int
    n_train: int
    status: str
    directory: str
    config_hash: str = ""


def load_manifest(path: Union[str, Path]) -> WalkthroughManifest:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"manifest not found: {path}")
    except json.JSONDecodeError as e:
        raise DataError(f"{path} is not valid JSON: {e}")
    return WalkthroughManifest(**payload)


def shown_parameters(k: int, gp_dim: int, n_projection: int) -> List[int]:
    """Column indices: the first min(n_projection, k) projection parameters, then every hyperparameter."""
    return list(range(min(n_projection, k))) + list(range(k, k + gp_dim + 2))


def chains_frame(model, columns: List[int]) -> pd.DataFrame:
    """Long format: chain, draw (0-based, post-warmup), then one column per shown parameter."""
    names = model.parameter_names()
    rows = []
    for c in range(model.n_chains):
        block = pd.DataFrame(model.chains[c][:, columns], columns=[names[j] for j in columns])
        block.insert(0, "draw", np.arange(model.n_draws))
        block.insert(0, "chain", c)
        rows.append(block)
    return pd.concat(rows, ignore_index=True)


def histogram_frame(model, columns: List[int], bins: int) -> pd.DataFrame:
    """Posterior histogram per parameter with the standard normal prior density at bin centres."""
    names = model.parameter_names()
    flat = model.flat_draws()
    frames = []
    for j in columns:
        counts, edges = np.histogram(flat[:, j], bins=bins)
        centers = 0.5 * (edges[:-1] + edges[1:])
        width = edges[1] - edges[0]
        frames.append(
            pd.DataFrame(
                {
                    "parameter": names[j],
                    "bin_left": edges[:-1],
                    "bin_right": edges[1:],
                    "bin_center": centers,
                    "posterior_count": counts,
                    "posterior_density": counts / (counts.sum() * width) if width > 0 else np.nan,
                    "prior_density": norm.pdf(centers),
                }
            )
        )
    return pd.concat(frames, ignore_index=True)


def actual_vs_predicted_frame(model, parts, draws_per_sample: int, seed: int) -> pd.DataFrame:
    frames = []
    for label, ds in (("train", parts.train), ("validation", parts.validation)):
        pred = predict_model(model, ds.X, draws_per_sample=draws_per_sample, seed=seed)
        frames.append(
            pd.DataFrame(
                {
                    "set": label,
                    "actual": ds.y,
                    "predicted_median": pred.median,
                    "predicted_mean": pred.mean,
                    "q05": pred.q05,
                    "q95": pred.q95,
                }
            )
        )
    return pd.concat(frames, ignore_index=True)


def run_cell(manifest: WalkthroughManifest, cell: WalkthroughCell, output_dir: Path) -> CellResult:
    cfg = manifest.run_config(cell)
    directory = output_dir / f"m{cell.m}_n{cell.n_train}"
    directory.mkdir(parents=True, exist_ok=True)
    metadata: Dict[str, Any] = {
        "m": cell.m,
        "n_train": cell.n_train,
        "seed": manifest.seed,
        "chains": manifest.sampler.chains,
        "draws": manifest.sampler.draws,
        "warmup": manifest.sampler.warmup,
        "config_hash": cfg.hash(),
        "artifact_version": ARTIFACT_VERSION,
    }
    ds = resolve_dataset(cfg)
    metadata["dataset"] = ds.name
    parts = split(ds, cfg.n_train, cfg.seed)
    model, _, _, _ = train_model(cfg, parts.train)

    columns = shown_parameters(model.k, model.gp_dim, manifest.chain_projection_params)
    write_csv(chains_frame(model, columns), directory / "chains.csv", metadata)
    names = model.parameter_names()
    rhat = summarize_rhat(model.chains) if model.n_chains >= 2 and model.n_draws >= 4 else np.full(len(names), np.nan)
    write_csv(pd.DataFrame({"parameter": names, "split_rhat": rhat}), directory / "rhat.csv", metadata)
    write_csv(histogram_frame(model, columns, manifest.histogram_bins), directory / "histograms.csv", metadata)
    write_csv(
        actual_vs_predicted_frame(model, parts, manifest.draws_per_sample, manifest.seed),
        directory / "actual_vs_predicted.csv",
        metadata,
    )
    save_model(model, directory / "model.json")
    write_json(diagnostics_payload(model), directory / "diagnostics.json")
    logger.info("[Walkthrough] cell m=%d n=%d written to %s", cell.m, cell.n_train, directory)
    return CellResult(m=cell.m, n_train=cell.n_train, status="ok", directory=str(directory), config_hash=cfg.hash())


def run_walkthrough(manifest: WalkthroughManifest, output_dir: Union[str, Path]) -> List[CellResult]:
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)

    def work(cell: WalkthroughCell) -> CellResult:
        try:
            return run_cell(manifest, cell, output_dir)
        except (SurrogateError, ValidationError, np.linalg.LinAlgError, FloatingPointError, OverflowError) as e:
            logger.warning("[Walkthrough] cell m=%d n=%d failed: %s", cell.m, cell.n_train, e)
            return CellResult(
                m=cell.m, n_train=cell.n_train, status=f"failed: {type(e).__name__}: {e}",
                directory=str(output_dir / f"m{cell.m}_n{cell.n_train}"),
            )

    if manifest.workers > 1 and len(manifest.cells) > 1:
        with ThreadPoolExecutor(max_workers=manifest.workers) as pool:
            results = list(pool.map(work, manifest.cells))
    else:
        results = [work(cell) for cell in manifest.cells]
    index = pd.DataFrame([r.model_dump() for r in results])
    write_csv(index, output_dir / "walkthrough_index.csv", {"artifact_version": ARTIFACT_VERSION})
    return results
