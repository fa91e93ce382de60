"""Command-line client for the quality pipeline.

Every command builds the same request models the HTTP service accepts and
dispatches them in-process by default; pass ``--server URL`` to send the
request to a running service instead.
"""

from __future__ import annotations

import json
from typing import Any, Callable, TypeVar

import click
import httpx
from pydantic import BaseModel

from . import service

R = TypeVar("R", bound=BaseModel)

_ROUTES: dict[str, tuple[Callable[..., BaseModel], type[BaseModel]]] = {
    "/synth": (service.handle_synth, service.SynthResponse),
    "/saliency/train": (service.handle_saliency_train, service.SaliencyTrainResponse),
    "/train": (service.handle_train, service.TrainResponse),
    "/predict": (service.handle_predict, service.PredictResponse),
    "/eval": (service.handle_eval, service.EvalResponse),
}


def _dispatch(server: str | None, route: str, request: BaseModel, response_type: type[R]) -> R:
    if server:
        url = server.rstrip("/") + route
        resp = httpx.post(url, json=request.model_dump(), timeout=None)
        resp.raise_for_status()
        return response_type.model_validate(resp.json())
    handler, _ = _ROUTES[route]
    return handler(request)  # type: ignore[return-value]


def _load_config_file(path: str | None) -> dict[str, Any]:
    if not path:
        return {}
    with open(path) as fh:
        return json.load(fh)


_SERVER_OPT = click.option(
    "--server", default=None, help="Base URL of a running service; default runs in-process."
)


@click.group()
def main() -> None:
    """Saliency-guided blind image quality assessment."""


@main.command("synth")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--count", default=300, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--height", default=512, show_default=True)
@click.option("--width", default=768, show_default=True)
@_SERVER_OPT
def synth_cmd(out_dir: str, count: int, seed: int, height: int, width: int, server: str | None) -> None:
    """Generate a synthetic dataset with scores and saliency ground truth."""
    req = service.SynthRequest(out_dir=out_dir, count=count, seed=seed, height=height, width=width)
    resp = _dispatch(server, "/synth", req, service.SynthResponse)
    click.echo(f"manifest: {resp.manifest}")
    click.echo(f"saliency_manifest: {resp.saliency_manifest}")
    click.echo(f"images: {resp.count}")


@main.command("saliency-train")
@click.option("--manifest", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--config", "config_path", default=None, type=click.Path(), help="JSON config overrides.")
@_SERVER_OPT
def saliency_train_cmd(manifest: str, out: str, seed: int, config_path: str | None, server: str | None) -> None:
    """Train the saliency detector from an image_path,map_path manifest."""
    req = service.SaliencyTrainRequest(
        manifest=manifest, out=out, seed=seed, config=_load_config_file(config_path)
    )
    resp = _dispatch(server, "/saliency/train", req, service.SaliencyTrainResponse)
    click.echo(f"model: {resp.model_path} ({resp.size_bytes} bytes, {resp.images} images)")


@main.command("train")
@click.option("--manifest", required=True, type=click.Path())
@click.option("--saliency-model", "saliency_model", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--val-frac", default=0.1, show_default=True)
@click.option("--config", "config_path", default=None, type=click.Path(), help="JSON config overrides.")
@click.option("--no-saliency-crop", is_flag=True, help="Replace saliency crop ranking with random crops.")
@click.option("--no-saliency-global", is_flag=True, help="Drop saliency statistics from the global stage.")
@click.option("--no-local-iterative", is_flag=True, help="Single local fit without target relaxation.")
@_SERVER_OPT
def train_cmd(
    manifest: str,
    saliency_model: str,
    out: str,
    seed: int,
    val_frac: float,
    config_path: str | None,
    no_saliency_crop: bool,
    no_saliency_global: bool,
    no_local_iterative: bool,
    server: str | None,
) -> None:
    """Train a quality model from an image_path,mos manifest."""
    req = service.TrainRequest(
        manifest=manifest,
        saliency_model=saliency_model,
        out=out,
        seed=seed,
        val_frac=val_frac,
        config=_load_config_file(config_path),
        no_saliency_crop=no_saliency_crop,
        no_saliency_global=no_saliency_global,
        no_local_iterative=no_local_iterative,
    )
    resp = _dispatch(server, "/train", req, service.TrainResponse)
    click.echo(f"model: {resp.model_path} ({resp.size_bytes} bytes)")
    click.echo(f"train images: {resp.n_train}, validation images: {resp.n_val}")


@main.command("predict")
@click.option("--model", required=True, type=click.Path())
@click.option("--image", required=True, type=click.Path())
@_SERVER_OPT
def predict_cmd(model: str, image: str, server: str | None) -> None:
    """Print the predicted quality score of one image."""
    req = service.PredictRequest(model=model, image=image)
    resp = _dispatch(server, "/predict", req, service.PredictResponse)
    click.echo(f"{resp.score:.6f}")


@main.command("eval")
@click.option("--manifest", required=True, type=click.Path())
@click.option("--saliency-model", "saliency_model", required=True, type=click.Path())
@click.option("--model-config", "model_config_path", default=None, type=click.Path(), help="JSON config overrides.")
@click.option("--runs", default=10, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--report", default=None, type=click.Path(), help="Write the JSON report here.")
@click.option("--timing/--no-timing", default=True, show_default=True, help="Measure latency and training time.")
@click.option("--no-saliency-crop", is_flag=True)
@click.option("--no-saliency-global", is_flag=True)
@click.option("--no-local-iterative", is_flag=True)
@_SERVER_OPT
def eval_cmd(
    manifest: str,
    saliency_model: str,
    model_config_path: str | None,
    runs: int,
    seed: int,
    report: str | None,
    timing: bool,
    no_saliency_crop: bool,
    no_saliency_global: bool,
    no_local_iterative: bool,
    server: str | None,
) -> None:
    """Train/test over repeated splits and report median PLCC and SROCC."""
    req = service.EvalRequest(
        manifest=manifest,
        saliency_model=saliency_model,
        model_config_overrides=_load_config_file(model_config_path),
        runs=runs,
        seed=seed,
        report=report,
        timing=timing,
        no_saliency_crop=no_saliency_crop,
        no_saliency_global=no_saliency_global,
        no_local_iterative=no_local_iterative,
    )
    resp = _dispatch(server, "/eval", req, service.EvalResponse)
    r = resp.report
    click.echo(f"median_plcc: {r['median_plcc']}")
    click.echo(f"median_srocc: {r['median_srocc']}")
    click.echo(f"model_size_bytes: {r['model_size_bytes']}")
    if r.get("timing_ms_per_image") is not None:
        click.echo(f"timing_ms_per_image: {r['timing_ms_per_image']}")
    if resp.report_path:
        click.echo(f"report: {resp.report_path}")


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def serve_cmd(host: str, port: int) -> None:
    """Run the HTTP service."""
    import uvicorn

    uvicorn.run(service.create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
