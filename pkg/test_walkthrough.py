import json
from pathlib import Path

import numpy as np
import pytest

from errors import DataError
from pipeline import read_csv
from walkthrough import WalkthroughManifest, load_manifest, run_walkthrough, shown_parameters


def _manifest(**overrides):
    payload = {
        "generator": {"d": 3, "m": 1, "n": 25, "seed": 2},
        "cells": [{"m": 1, "n_train": 10}, {"m": 4, "n_train": 10}],
        "sampler": {"chains": 2, "draws": 8, "warmup": 8},
        "draws_per_sample": 2,
        "chain_projection_params": 2,
        "histogram_bins": 5,
    }
    payload.update(overrides)
    return WalkthroughManifest(**payload)


def test_shown_parameters():
    assert shown_parameters(k=10, gp_dim=1, n_projection=5) == [0, 1, 2, 3, 4, 10, 11, 12]
    assert shown_parameters(k=2, gp_dim=2, n_projection=5) == [0, 1, 2, 3, 4, 5]


def test_walkthrough_writes_cell_artifacts_and_survives_a_failing_cell(tmp_path):
    results = run_walkthrough(_manifest(), tmp_path)
    assert [r.status for r in results][0] == "ok"
    assert results[1].status.startswith("failed: UsageError")

    cell = tmp_path / "m1_n10"
    for name in ("chains.csv", "rhat.csv", "histograms.csv", "actual_vs_predicted.csv", "model.json", "diagnostics.json"):
        assert (cell / name).exists(), name

    chains = read_csv(cell / "chains.csv")
    assert list(chains.columns) == ["chain", "draw", "theta_p0", "theta_p1", "log_sigma_n", "log_sigma_f", "log_l1"]
    assert len(chains) == 16

    rhat = read_csv(cell / "rhat.csv")
    assert len(rhat) == 3 + 3

    avp = read_csv(cell / "actual_vs_predicted.csv")
    assert sorted(avp["set"].unique()) == ["train", "validation"]
    assert (avp["set"] == "train").sum() == 10 and len(avp) == 25
    assert (avp["q05"] <= avp["q95"]).all()

    header = (cell / "chains.csv").read_text().splitlines()[0]
    assert header.startswith("# m: 1")
    assert len(read_csv(tmp_path / "walkthrough_index.csv")) == 2


def test_histogram_counts_cover_all_draws(tmp_path):
    run_walkthrough(_manifest(cells=[{"m": 1, "n_train": 10}]), tmp_path)
    hist = read_csv(tmp_path / "m1_n10" / "histograms.csv")
    for _, group in hist.groupby("parameter"):
        assert group["posterior_count"].sum() == 16
        assert len(group) == 5
    assert np.all(hist["prior_density"] > 0)


def test_manifest_validation(tmp_path):
    with pytest.raises(ValueError):
        _manifest(cells=[])
    with pytest.raises(ValueError):
        _manifest(dataset="x.csv")
    with pytest.raises(DataError):
        load_manifest(tmp_path / "missing.json")
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps({"generator": {"d": 2, "m": 1, "n": 10}, "cells": [{"m": 1, "n_train": 5}]}))
    assert load_manifest(path).cells[0].n_train == 5


def test_bundled_manifest_documents_chain_columns():
    manifest = load_manifest(Path(__file__).parent / "walkthrough_manifest.json")
    assert manifest.generator.d == 50 and len(manifest.cells) == 4
    note = manifest.notes["chains.csv"]
    assert note.index("chain") < note.index("draw") < note.index("theta_p0") < note.index("log_sigma_n")
