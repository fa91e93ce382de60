"""Synthetic dataset generator with known quality scores and saliency maps.

Each image is a smooth tinted gradient background with mild texture plus one
bright, strongly textured elliptical object (the salient region).  Degradation
is a global Gaussian blur and additive Gaussian noise; the quality score is a
deterministic decreasing function of both strengths plus a small jitter.  The
ground-truth saliency map is the blurred object mask normalized to [0, 1].
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .datasets import write_quality_manifest, write_saliency_manifest
from .errors import InvalidInputError
from .imageio import from_array, save_gray_map, save_image

SIGMA_MAX = 9.0
NOISE_MAX = 18.0


@dataclass
class SynthResult:
    manifest_path: str
    saliency_manifest_path: str
    params_path: str
    count: int


def _render_scene(rng: np.random.Generator, height: int, width: int):
    """Pristine scene plus the hard object mask."""
    yy, xx = np.meshgrid(
        np.linspace(0.0, 1.0, height, dtype=np.float32),
        np.linspace(0.0, 1.0, width, dtype=np.float32),
        indexing="ij",
    )
    gx, gy = rng.uniform(-40.0, 40.0, size=2)
    base_level = rng.uniform(70.0, 120.0)
    background = base_level + gx * xx + gy * yy
    background = background + cv2.GaussianBlur(
        rng.normal(0.0, 6.0, size=(height, width)).astype(np.float32), (0, 0), 6.0
    )

    cy = rng.uniform(0.30, 0.70) * height
    cx = rng.uniform(0.30, 0.70) * width
    ry = rng.uniform(0.13, 0.24) * height
    rx = rng.uniform(0.13, 0.24) * width
    mask = (((yy * height - cy) / ry) ** 2 + ((xx * width - cx) / rx) ** 2) <= 1.0
    mask = mask.astype(np.float32)
    soft = cv2.GaussianBlur(mask, (0, 0), 3.0)

    fy = rng.uniform(0.06, 0.20)
    fx = rng.uniform(0.06, 0.20)
    phase_y, phase_x = rng.uniform(0.0, 2.0 * np.pi, size=2)
    texture = 34.0 * np.sin(2.0 * np.pi * fy * yy * height + phase_y) * np.sin(
        2.0 * np.pi * fx * xx * width + phase_x
    )
    speckle = rng.normal(0.0, 26.0, size=(height, width)).astype(np.float32)
    obj = background + rng.uniform(35.0, 70.0) + texture + speckle

    bg_tint = rng.uniform(0.82, 1.18, size=3)
    obj_tint = rng.uniform(0.82, 1.18, size=3)
    img = np.empty((height, width, 3), dtype=np.float32)
    for ch in range(3):
        img[:, :, ch] = background * bg_tint[ch] * (1.0 - soft) + obj * obj_tint[ch] * soft
    return img, mask


def _degrade(img: np.ndarray, sigma: float, noise: float, rng: np.random.Generator) -> np.ndarray:
    out = img
    if sigma > 0.0:
        out = cv2.GaussianBlur(out, (0, 0), sigma)
    if noise > 0.0:
        out = out + rng.normal(0.0, noise, size=out.shape).astype(np.float32)
    return np.clip(out, 0.0, 255.0)


def quality_score(sigma: float, noise: float, jitter: float = 0.0) -> float:
    """Deterministic score in [1, 5]: 4.6 at pristine, decreasing in both strengths."""
    d = 0.62 * (sigma / SIGMA_MAX) ** 0.8 + 0.38 * (noise / NOISE_MAX) ** 0.9
    return float(np.clip(4.6 - 3.4 * d + jitter, 1.0, 5.0))


def _saliency_map(mask: np.ndarray) -> np.ndarray:
    soft = cv2.GaussianBlur(mask, (0, 0), 12.0)
    peak = float(soft.max())
    return soft / peak if peak > 0 else soft


def generate_dataset(
    out_dir: str | Path,
    count: int,
    seed: int = 0,
    height: int = 512,
    width: int = 768,
) -> SynthResult:
    """Render ``count`` images plus ground truth into ``out_dir``.

    Writes images/, maps/, manifest.csv (image_path,mos relative to out_dir),
    saliency_manifest.csv and params.csv (the true blur/noise strengths).
    Image 0 is always pristine so every dataset has an undistorted reference.
    """
    if count < 1:
        raise InvalidInputError("count must be >= 1")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "maps").mkdir(parents=True, exist_ok=True)

    entries: list[tuple[str, float]] = []
    pairs: list[tuple[str, str]] = []
    params_rows = []
    for idx in range(count):
        rng = np.random.default_rng([seed, idx])
        img, mask = _render_scene(rng, height, width)
        if idx == 0:
            sigma, noise = 0.0, 0.0
        else:
            sigma = 0.0 if rng.random() < 0.15 else float(rng.uniform(0.8, SIGMA_MAX))
            noise = 0.0 if rng.random() < 0.20 else float(rng.uniform(2.0, NOISE_MAX))
        degraded = _degrade(img, sigma, noise, rng)
        jitter = float(rng.uniform(-0.05, 0.05))
        mos = quality_score(sigma, noise, jitter)

        name = f"im_{idx:04d}.png"
        save_image(out / "images" / name, from_array(degraded))
        save_gray_map(out / "maps" / name, _saliency_map(mask))
        entries.append((f"images/{name}", mos))
        pairs.append((f"images/{name}", f"maps/{name}"))
        params_rows.append((name, sigma, noise, mos))

    manifest = out / "manifest.csv"
    sal_manifest = out / "saliency_manifest.csv"
    params = out / "params.csv"
    write_quality_manifest(manifest, entries)
    write_saliency_manifest(sal_manifest, pairs)
    with open(params, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image", "sigma", "noise", "mos"])
        for row in params_rows:
            writer.writerow([row[0], f"{row[1]:.4f}", f"{row[2]:.4f}", f"{row[3]:.6f}"])
    return SynthResult(
        manifest_path=str(manifest),
        saliency_manifest_path=str(sal_manifest),
        params_path=str(params),
        count=count,
    )


def generate_blur_series(
    out_dir: str | Path,
    count: int,
    sigmas: tuple[float, ...] = (0.0, 2.0, 4.0, 8.0),
    seed: int = 0,
    height: int = 512,
    width: int = 768,
) -> list[list[str]]:
    """Blur ladders for monotonicity checks: ``count`` scenes, each rendered
    noise-free at every sigma.  Returns one list of file paths per scene,
    ordered like ``sigmas``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    series: list[list[str]] = []
    for idx in range(count):
        rng = np.random.default_rng([seed, 7_000_000 + idx])
        img, _ = _render_scene(rng, height, width)
        row = []
        for sigma in sigmas:
            blurred = _degrade(img, float(sigma), 0.0, rng)
            name = f"grade_{idx:03d}_s{sigma:g}.png"
            save_image(out / name, from_array(blurred))
            row.append(str(out / name))
        series.append(row)
    return series
