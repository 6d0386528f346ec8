"""
cli.py - Command-line entry point

    python cli.py generate    --d 10 --m 1 --n 1000 --seed 7 --output qf.csv
    python cli.py train       --method bas --dataset qf.csv --m 1 --n-train 50
    python cli.py predict     --model runs/x/model.json --inputs points.csv
    python cli.py evaluate    --model runs/x/model.json --dataset qf.csv --results results.csv
    python cli.py sweep       --config sweep.json
    python cli.py diagnostics --file runs/x/diagnostics.json
    python cli.py walkthrough --manifest walkthrough_manifest.json
    python cli.py serve       --port 8000

`train` and `sweep` accept --config JSON; flags given explicitly are merged over it.
Exit codes: 0 success, 1 runtime/numerical failure, 2 usage/config error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import ValidationError

from config import ARTIFACT_VERSION, merge_nested_data, setup_logging
from data import generate_quadratic, load_dataset, read_inputs, save_dataset, save_quadratic_spec, split
from errors import DataError, SurrogateError, UsageError
from metrics import RESULT_COLUMNS
from pipeline import (
    RunConfig,
    SweepConfig,
    diagnostics_payload,
    evaluate_model,
    load_model,
    prediction_frame,
    predict_model,
    run_cell,
    run_sweep,
    write_csv,
)
from walkthrough import load_manifest, run_walkthrough

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _read_config(path: Optional[str]) -> Dict[str, Any]:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise UsageError(f"config file {path} is not valid JSON: {e}")


def _given(values: Dict[str, Any]) -> Dict[str, Any]:
    """Drop flags that were not given (None), recursing into nested groups."""
    out = {}
    for key, value in values.items():
        if isinstance(value, dict):
            nested = _given(value)
            if nested:
                out[key] = nested
        elif value is not None:
            out[key] = value
    return out


def _sampler_flags(args) -> Dict[str, Any]:
    return {
        "chains": args.chains,
        "draws": args.draws,
        "warmup": args.warmup,
        "target_accept": args.target_accept,
        "max_tree_depth": args.max_tree_depth,
    }


def _generator_flags(args) -> Optional[Dict[str, Any]]:
    if args.generate_d is None:
        return None
    return {
        "d": args.generate_d,
        "m": args.generate_m if args.generate_m is not None else args.m,
        "n": args.generate_n,
        "seed": args.generate_seed,
        "noise_std": args.noise_std,
    }


# ---------------------------
# Commands
# ---------------------------


def cmd_generate(args) -> int:
    ds, spec = generate_quadratic(args.d, args.m, args.n, args.seed, args.noise_std)
    output = Path(args.output or f"quadratic_d{args.d}_m{args.m}_n{args.n}_seed{args.seed}.csv")
    spec_output = Path(args.spec_output or output.with_suffix(".spec.json"))
    save_dataset(ds, output)
    save_quadratic_spec(spec, spec_output)
    logger.info("[CLI] wrote %s (%d rows) and %s", output, ds.n, spec_output)
    return EXIT_OK


def cmd_train(args) -> int:
    flags = _given(
        {
            "method": args.method,
            "dataset": args.dataset,
            "generator": _generator_flags(args),
            "m": args.m,
            "n_train": args.n_train,
            "seed": args.seed,
            "sampler": _sampler_flags(args),
            "moas_restarts": args.moas_restarts,
            "bgp_n_grad": args.bgp_n_grad,
            "draws_per_sample": args.draws_per_sample,
            "output_dir": args.output_dir,
        }
    )
    cfg = RunConfig(**merge_nested_data(_read_config(args.config), flags))
    output_dir = Path(cfg.output_dir or f"runs/{cfg.method}_{cfg.hash()[:12]}")
    report, _ = run_cell(cfg, output_dir)
    write_csv(pd.DataFrame([report.to_row()], columns=RESULT_COLUMNS), output_dir / "metrics.csv", {
        "config_hash": cfg.hash(),
        "artifact_version": ARTIFACT_VERSION,
    })
    print(json.dumps({"output_dir": str(output_dir), **report.to_row()}, default=str))
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_model(args.model)
    X_star = read_inputs(args.inputs, model.d)
    pred = predict_model(model, X_star, draws_per_sample=args.draws_per_sample, seed=args.seed)
    frame = prediction_frame(pred)
    metadata = {"model": args.model, "config_hash": model.config_hash, "artifact_version": ARTIFACT_VERSION}
    if args.output:
        write_csv(frame, args.output, metadata)
        logger.info("[CLI] wrote %d predictions to %s", len(frame), args.output)
    else:
        frame.to_csv(sys.stdout, index=False, float_format="%.17g")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = load_model(args.model)
    ds = load_dataset(args.dataset)
    n_train = args.n_train if args.n_train is not None else int(model.X_train.shape[0])
    seed = args.split_seed if args.split_seed is not None else model.seed
    parts = split(ds, n_train, seed)
    report = evaluate_model(
        model,
        parts.validation,
        ds.name,
        seed,
        reference_gradients=None if args.no_gradients else ds.gradients,
        draws_per_sample=args.draws_per_sample,
    )
    row = pd.DataFrame([report.to_row()], columns=RESULT_COLUMNS)
    results = Path(args.results)
    if results.exists():
        row.to_csv(results, mode="a", header=False, index=False, float_format="%.17g")
    else:
        write_csv(row, results, {"artifact_version": ARTIFACT_VERSION})
    print(json.dumps(report.to_row(), default=str))
    return EXIT_OK


def cmd_sweep(args) -> int:
    flags = _given(
        {
            "methods": args.methods.split(",") if args.methods else None,
            "dataset": args.dataset,
            "generator": _generator_flags(args),
            "m": args.m,
            "n_train": [int(v) for v in args.n_train.split(",")] if args.n_train else None,
            "seeds": [int(v) for v in args.seeds.split(",")] if args.seeds else None,
            "sampler": _sampler_flags(args),
            "moas_restarts": args.moas_restarts,
            "bgp_n_grad": args.bgp_n_grad,
            "draws_per_sample": args.draws_per_sample,
            "output_dir": args.output_dir,
            "workers": args.workers,
            "resume": False if args.no_resume else None,
        }
    )
    sweep = SweepConfig(**merge_nested_data(_read_config(args.config), flags))
    results = run_sweep(sweep)
    failed = int((results["status"] != "ok").sum())
    print(json.dumps({"output_dir": sweep.output_dir, "cells": len(results), "failed": failed}))
    return EXIT_OK


def diagnostics_table(payload: Dict[str, Any]) -> pd.DataFrame:
    rhat = payload.get("split_rhat") or {}
    return pd.DataFrame({"parameter": list(rhat.keys()), "split_rhat": list(rhat.values())})


def cmd_diagnostics(args) -> int:
    if args.model:
        payload = diagnostics_payload(load_model(args.model))
    else:
        try:
            payload = json.loads(Path(args.file).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise DataError(f"diagnostics file not found: {args.file}")
    table = diagnostics_table(payload)
    if args.output:
        write_csv(table, args.output, {"config_hash": payload.get("config_hash", ""), "artifact_version": ARTIFACT_VERSION})
    print(f"method: {payload.get('method')}  training_seconds: {payload.get('training_seconds')}")
    for key in ("acceptance_rate", "divergence_count", "step_size", "max_depth_hits", "restarts_used", "failure_counts"):
        if payload.get(key) is not None:
            print(f"{key}: {payload[key]}")
    if not table.empty:
        print(table.to_string(index=False))
        print(f"split_rhat max: {payload.get('split_rhat_max')}  median: {payload.get('split_rhat_median')}")
    return EXIT_OK


def cmd_walkthrough(args) -> int:
    manifest = load_manifest(args.manifest)
    results = run_walkthrough(manifest, args.output_dir)
    failed = [r for r in results if r.status != "ok"]
    print(json.dumps({"output_dir": args.output_dir, "cells": len(results), "failed": len(failed)}))
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("server:app", host=args.host, port=args.port, log_level=args.log_level.lower())
    return EXIT_OK


# ---------------------------
# Parser
# ---------------------------


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; explicit flags override it")
    p.add_argument("--dataset", help="dataset CSV/XLSX")
    p.add_argument("--generate-d", type=int, help="generate a quadratic benchmark with this d instead")
    p.add_argument("--generate-m", type=int, help="active dimension of the generated benchmark (default: --m)")
    p.add_argument("--generate-n", type=int, help="rows of the generated benchmark")
    p.add_argument("--generate-seed", type=int)
    p.add_argument("--noise-std", type=float)
    p.add_argument("--m", type=int, help="feature-space dimension")
    p.add_argument("--chains", type=int)
    p.add_argument("--draws", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--target-accept", type=float)
    p.add_argument("--max-tree-depth", type=int)
    p.add_argument("--moas-restarts", type=int)
    p.add_argument("--bgp-n-grad", type=int)
    p.add_argument("--draws-per-sample", type=int)
    p.add_argument("--output-dir")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bas", description="Bayesian active-subspace GP surrogates")
    parser.add_argument("--log-level", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a quadratic benchmark")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-std", type=float)
    p.add_argument("--output")
    p.add_argument("--spec-output")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one model and evaluate it on the held-out rows")
    _add_run_flags(p)
    p.add_argument("--method", choices=["bas", "moas", "bgp"])
    p.add_argument("--n-train", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict at new inputs")
    p.add_argument("--model", required=True)
    p.add_argument("--inputs", required=True)
    p.add_argument("--output")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--draws-per-sample", type=int)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="append one metrics row for a model on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split-seed", type=int)
    p.add_argument("--n-train", type=int)
    p.add_argument("--results", default="results.csv")
    p.add_argument("--no-gradients", action="store_true", help="skip MFSA even if gradients are present")
    p.add_argument("--draws-per-sample", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="methods x training sizes x seeds")
    _add_run_flags(p)
    p.add_argument("--methods", help="comma separated, e.g. bas,moas,bgp")
    p.add_argument("--n-train", help="comma separated sizes (default: 1..5 times d)")
    p.add_argument("--seeds", help="comma separated seeds")
    p.add_argument("--workers", type=int)
    p.add_argument("--no-resume", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("diagnostics", help="show R-hat, acceptance and divergences")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--file", help="diagnostics.json written by train")
    group.add_argument("--model", help="model file; diagnostics are recomputed")
    p.add_argument("--output", help="write the R-hat table as CSV")
    p.set_defaults(func=cmd_diagnostics)

    p = sub.add_parser("walkthrough", help="run a walk-through manifest")
    p.add_argument("--manifest", default="walkthrough_manifest.json")
    p.add_argument("--output-dir", default="walkthrough_output")
    p.set_defaults(func=cmd_walkthrough)

    p = sub.add_parser("serve", help="serve models over HTTP")
    p.add_argument("--host", default="0.0.0.0")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def _fail(code: int, error: Exception) -> int:
    logger.error("[CLI] %s: %s", type(error).__name__, error)
    print(json.dumps({"error": type(error).__name__, "message": str(error)}), file=sys.stderr)
    return code


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on bad usage and 0 on --help
        return int(e.code or 0)
    setup_logging(args.log_level)
    if not hasattr(args, "log_level") or args.log_level is None:
        args.log_level = "info"
    try:
        return args.func(args)
    except (UsageError, ValidationError) as e:
        return _fail(EXIT_USAGE, e)
    except SurrogateError as e:
        return _fail(EXIT_RUNTIME, e)
    except (np.linalg.LinAlgError, FloatingPointError, OverflowError, OSError) as e:
        return _fail(EXIT_RUNTIME, e)


if __name__ == "__main__":
    sys.exit(main())
