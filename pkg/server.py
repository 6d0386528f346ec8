"""
FastAPI surface for trained surrogates.

This module lets a trained model be evaluated in place of the expensive function:
- GET  /api/health    status and artifact version
- POST /api/predict   model JSON + CSV of inputs (x0..x{d-1}) -> predictive summaries per row
- POST /api/evaluate  model JSON + dataset CSV/XLSX -> one metrics report on held-out rows

Models are read from the upload on every request and never stored.
Numerical work runs in a worker thread so the event loop stays responsive.

Run: uvicorn server:app --port 8000   (or: python cli.py serve)
"""

import asyncio
import io
import json
import logging
from typing import Optional

import pandas as pd
from fastapi import FastAPI, File, Form, HTTPException, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from pydantic import ValidationError

from config import ARTIFACT_VERSION, setup_logging
from data import load_dataset_bytes, read_inputs, split
from errors import DataError, InvalidArgumentError, SurrogateError, UsageError
from pipeline import evaluate_model, model_from_dict, model_kind, predict_model

setup_logging()
logger = logging.getLogger(__name__)

app = FastAPI(title="Bayesian Active-Subspace Surrogate API")
app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_credentials=True, allow_methods=["*"], allow_headers=["*"])

CLIENT_ERRORS = (UsageError, DataError, InvalidArgumentError, ValidationError)


def _raise_http(e: Exception) -> None:
    """Map package errors onto HTTP status codes."""
    if isinstance(e, CLIENT_ERRORS):
        raise HTTPException(status_code=400, detail=f"{type(e).__name__}: {e}")
    raise HTTPException(status_code=500, detail=f"{type(e).__name__}: {e}")


async def _read_model(upload: UploadFile):
    content = await upload.read()
    try:
        payload = json.loads(content.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise HTTPException(status_code=400, detail=f"model file {upload.filename} is not valid JSON: {e}")
    try:
        return model_from_dict(payload)
    except CLIENT_ERRORS as e:
        _raise_http(e)


@app.get("/api/health")
async def health():
    return {"status": "ok", "artifactVersion": ARTIFACT_VERSION}


@app.post("/api/predict")
async def predict(
    model: UploadFile = File(...),
    inputs: UploadFile = File(...),
    seed: int = Form(0),
    draws_per_sample: Optional[int] = Form(None),
):
    """Predict at every row of the uploaded inputs CSV."""
    surrogate = await _read_model(model)
    raw = await inputs.read()
    logger.info("[API] predict: %s model (d=%d), inputs %s", model_kind(surrogate), surrogate.d, inputs.filename)
    try:
        frame = pd.read_csv(io.StringIO(raw.decode("utf-8")), dtype=str, keep_default_na=False, comment="#")
        X_star = read_inputs(frame, surrogate.d)
        pred = await asyncio.to_thread(predict_model, surrogate, X_star, draws_per_sample, seed)
    except (SurrogateError, ValidationError) as e:
        logger.warning("[API] predict failed: %s", e)
        _raise_http(e)
    except (UnicodeDecodeError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise HTTPException(status_code=400, detail=f"could not parse inputs: {e}")

    return {
        "success": True,
        "data": pred.to_records(),
        "message": f"Predicted {len(X_star)} point(s) with a {model_kind(surrogate)} model",
        "stats": {"points": len(X_star), "poolSize": pred.pool_size, "configHash": surrogate.config_hash},
    }


@app.post("/api/evaluate")
async def evaluate(
    model: UploadFile = File(...),
    dataset: UploadFile = File(...),
    split_seed: Optional[int] = Form(None),
    n_train: Optional[int] = Form(None),
    draws_per_sample: Optional[int] = Form(None),
):
    """Metrics on the rows held out by the split the model was trained with (or the given one)."""
    surrogate = await _read_model(model)
    content = await dataset.read()
    try:
        ds = load_dataset_bytes(content, dataset.filename)
        if n_train is None and surrogate.X_train is None:
            raise DataError("model carries no training data; pass n_train")
        n = n_train if n_train is not None else int(surrogate.X_train.shape[0])
        seed = split_seed if split_seed is not None else surrogate.seed
        parts = split(ds, n, seed)
        report = await asyncio.to_thread(
            evaluate_model, surrogate, parts.validation, ds.name, seed, ds.gradients, draws_per_sample
        )
    except (SurrogateError, ValidationError) as e:
        logger.warning("[API] evaluate failed: %s", e)
        _raise_http(e)
    except UnicodeDecodeError as e:
        raise HTTPException(status_code=400, detail=f"could not decode dataset: {e}")

    return {
        "success": report.status == "ok",
        "data": report.to_row(),
        "message": f"Evaluated {report.method} on {report.dataset} ({len(parts.validation.y)} held-out rows)",
    }


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host="0.0.0.0", port=8000)
