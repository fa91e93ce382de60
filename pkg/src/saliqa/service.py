"""HTTP service wrapping the quality pipeline.

The request/response models and handler functions are plain callables shared
with the command-line client, which dispatches to them in-process by default;
``create_app`` exposes the same handlers over HTTP.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any

import numpy as np
from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, Field

from . import __version__
from .datasets import read_quality_manifest, read_saliency_manifest
from .errors import (
    FormatError,
    InsufficientDataError,
    InvalidInputError,
    InvalidStateError,
    SaliqaError,
    UndefinedMetricError,
)
from .experiment import run_experiment
from .imageio import load_gray_map, load_image
from .modelio import read_container, write_container
from .quality import (
    QualityConfig,
    config_with_overrides,
    load_model,
    predict_quality,
    save_model,
    train_pipeline,
)
from .saliency import (
    SaliencyConfig,
    SaliencyModel,
    saliency_from_arrays,
    saliency_to_arrays,
    saliency_train,
)
from .synth import generate_dataset

SALIENCY_KIND = "saliency"


# ---------------------------------------------------------------------------
# Request / response models
# ---------------------------------------------------------------------------

class ApiModel(BaseModel):
    # Several fields legitimately start with "model"; opt out of the reserved
    # pydantic namespace.
    model_config = ConfigDict(protected_namespaces=())


class HealthResponse(ApiModel):
    status: str
    version: str


class SynthRequest(ApiModel):
    out_dir: str
    count: int = 300
    seed: int = 0
    height: int = 512
    width: int = 768


class SynthResponse(ApiModel):
    manifest: str
    saliency_manifest: str
    params: str
    count: int


class SaliencyTrainRequest(ApiModel):
    manifest: str
    out: str
    seed: int = 0
    config: dict[str, Any] = Field(default_factory=dict)


class SaliencyTrainResponse(ApiModel):
    model_path: str
    size_bytes: int
    images: int


class AblationFlags(ApiModel):
    no_saliency_crop: bool = False
    no_saliency_global: bool = False
    no_local_iterative: bool = False


class TrainRequest(AblationFlags):
    manifest: str
    saliency_model: str
    out: str
    seed: int = 0
    val_frac: float = 0.1
    config: dict[str, Any] = Field(default_factory=dict)


class TrainResponse(ApiModel):
    model_path: str
    size_bytes: int
    n_train: int
    n_val: int


class PredictRequest(ApiModel):
    model: str
    image: str


class PredictResponse(ApiModel):
    score: float


class EvalRequest(AblationFlags):
    manifest: str
    saliency_model: str
    model_config_overrides: dict[str, Any] = Field(default_factory=dict)
    runs: int = 10
    seed: int = 0
    report: str | None = None
    timing: bool = True


class EvalResponse(ApiModel):
    report: dict[str, Any]
    report_path: str | None = None


# ---------------------------------------------------------------------------
# Saliency model file round trip
# ---------------------------------------------------------------------------

def save_saliency_model(path: str | Path, model: SaliencyModel) -> int:
    return write_container(
        path, SALIENCY_KIND, {"saliency": model.config.to_dict()}, saliency_to_arrays(model)
    )


def load_saliency_model(path: str | Path) -> SaliencyModel:
    kind, config, arrays = read_container(path)
    if kind != SALIENCY_KIND:
        raise InvalidStateError(f"expected a {SALIENCY_KIND} model, found {kind!r}")
    return saliency_from_arrays(SaliencyConfig.from_dict(config["saliency"]), arrays)


# ---------------------------------------------------------------------------
# Handlers (used in-process by the CLI and over HTTP by the app)
# ---------------------------------------------------------------------------

def handle_health() -> HealthResponse:
    return HealthResponse(status="ok", version=__version__)


def handle_synth(req: SynthRequest) -> SynthResponse:
    result = generate_dataset(req.out_dir, req.count, req.seed, req.height, req.width)
    return SynthResponse(
        manifest=result.manifest_path,
        saliency_manifest=result.saliency_manifest_path,
        params=result.params_path,
        count=result.count,
    )


def handle_saliency_train(req: SaliencyTrainRequest) -> SaliencyTrainResponse:
    pairs = read_saliency_manifest(req.manifest)
    config_dict = SaliencyConfig().to_dict()
    for key, value in req.config.items():
        if key == "gbrt" and isinstance(value, dict):
            config_dict["gbrt"] = {**config_dict["gbrt"], **value}
        else:
            config_dict[key] = value
    config = SaliencyConfig.from_dict(config_dict)
    config.seed = req.seed
    images = [load_image(p) for p, _ in pairs]
    maps = [load_gray_map(m) for _, m in pairs]
    model = saliency_train(images, maps, config)
    size = save_saliency_model(req.out, model)
    return SaliencyTrainResponse(model_path=str(req.out), size_bytes=size, images=len(pairs))


def _build_quality_config(
    overrides: dict[str, Any], flags: AblationFlags, seed: int
) -> QualityConfig:
    config = config_with_overrides(QualityConfig(), overrides)
    if flags.no_saliency_crop:
        config.use_saliency_crop = False
    if flags.no_saliency_global:
        config.use_saliency_global = False
    if flags.no_local_iterative:
        config.local_iterative = False
    config.seed = seed
    return config


def handle_train(req: TrainRequest) -> TrainResponse:
    manifest = read_quality_manifest(req.manifest)
    saliency = load_saliency_model(req.saliency_model)
    config = _build_quality_config(req.config, req, req.seed)
    entries = manifest.entries
    rng = np.random.default_rng(req.seed)
    perm = rng.permutation(len(entries))
    n_val = int(round(req.val_frac * len(entries)))
    if len(entries) - n_val < 2:
        n_val = 0
    val_entries = [entries[i] for i in perm[:n_val]]
    train_entries = [entries[i] for i in perm[n_val:]]
    model = train_pipeline(train_entries, val_entries or None, saliency, config)
    size = save_model(req.out, model)
    return TrainResponse(
        model_path=str(req.out), size_bytes=size, n_train=len(train_entries), n_val=n_val
    )


_MODEL_CACHE: dict[tuple[str, float], Any] = {}


def _cached_model(path: str):
    mtime = Path(path).stat().st_mtime
    key = (str(Path(path).resolve()), mtime)
    model = _MODEL_CACHE.get(key)
    if model is None:
        model = load_model(path)
        if len(_MODEL_CACHE) >= 4:
            _MODEL_CACHE.pop(next(iter(_MODEL_CACHE)))
        _MODEL_CACHE[key] = model
    return model


def handle_predict(req: PredictRequest) -> PredictResponse:
    model = _cached_model(req.model)
    img = load_image(req.image)
    return PredictResponse(score=predict_quality(model, img))


def handle_eval(req: EvalRequest) -> EvalResponse:
    manifest = read_quality_manifest(req.manifest)
    saliency = load_saliency_model(req.saliency_model)
    config = _build_quality_config(req.model_config_overrides, req, seed=0)
    report = run_experiment(
        manifest,
        saliency,
        config,
        runs=req.runs,
        seed=req.seed,
        measure_timing=req.timing,
    )
    report_path = None
    if req.report:
        report.save(req.report)
        report_path = str(req.report)
    return EvalResponse(report=report.to_dict(), report_path=report_path)


# ---------------------------------------------------------------------------
# FastAPI application
# ---------------------------------------------------------------------------

def create_app() -> FastAPI:
    app = FastAPI(title="saliqa", version=__version__)

    @app.exception_handler(SaliqaError)
    async def _saliqa_error(request, exc: SaliqaError):
        status = 422
        if isinstance(exc, InvalidStateError):
            status = 409
        elif isinstance(exc, FormatError):
            status = 400
        elif isinstance(exc, (InvalidInputError, InsufficientDataError, UndefinedMetricError)):
            status = 422
        return JSONResponse(status_code=status, content={"detail": str(exc)})

    @app.exception_handler(FileNotFoundError)
    async def _not_found(request, exc: FileNotFoundError):
        return JSONResponse(status_code=404, content={"detail": str(exc)})

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return handle_health()

    @app.post("/synth", response_model=SynthResponse)
    def synth(req: SynthRequest) -> SynthResponse:
        return handle_synth(req)

    @app.post("/saliency/train", response_model=SaliencyTrainResponse)
    def saliency_train_endpoint(req: SaliencyTrainRequest) -> SaliencyTrainResponse:
        return handle_saliency_train(req)

    @app.post("/train", response_model=TrainResponse)
    def train(req: TrainRequest) -> TrainResponse:
        return handle_train(req)

    @app.post("/predict", response_model=PredictResponse)
    def predict(req: PredictRequest) -> PredictResponse:
        return handle_predict(req)

    @app.post("/eval", response_model=EvalResponse)
    def evaluate(req: EvalRequest) -> EvalResponse:
        return handle_eval(req)

    return app
