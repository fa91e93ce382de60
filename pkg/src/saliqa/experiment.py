"""Repeated-split evaluation protocol for quality models.

Each run shuffles the manifest with its own seed, holds out 20% of the images
for testing, carves 10% of the remaining training images into a validation
split, trains the full pipeline, and scores the test predictions with PLCC and
SROCC.  The report aggregates runs by the median and records the serialized
model size and (optionally) the median per-image prediction latency, measured
on decoded images so file I/O is excluded.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .datasets import DatasetManifest
from .errors import InsufficientDataError, UndefinedMetricError
from .imageio import RasterImage, from_array, load_image
from .metrics import plcc, srocc
from .quality import QualityConfig, model_to_bytes, predict_quality, train_pipeline
from .saliency import SaliencyModel


@dataclass
class RunRecord:
    run: int
    seed: int
    plcc: float | None = None
    srocc: float | None = None
    n_train: int = 0
    n_val: int = 0
    n_test: int = 0
    train_seconds: float | None = None
    error: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


@dataclass
class MetricsReport:
    protocol: dict[str, Any]
    runs: list[RunRecord] = field(default_factory=list)
    median_plcc: float | None = None
    median_srocc: float | None = None
    model_size_bytes: int | None = None
    timing_ms_per_image: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "protocol": self.protocol,
            "runs": [r.to_dict() for r in self.runs],
            "median_plcc": self.median_plcc,
            "median_srocc": self.median_srocc,
            "model_size_bytes": self.model_size_bytes,
            "timing_ms_per_image": self.timing_ms_per_image,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")


class ImageCache:
    """Keeps decoded images as uint8 to bound memory; rebuilds float views on use."""

    def __init__(self):
        self._store: dict[str, np.ndarray] = {}

    def __call__(self, path: str) -> RasterImage:
        arr = self._store.get(path)
        if arr is None:
            img = load_image(path)
            arr = img.samples.astype(np.uint8)
            self._store[path] = arr
        return from_array(arr)


def split_indices(
    n: int, seed: int, train_frac: float, val_frac: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Disjoint (train, val, test) index arrays for one run."""
    perm = np.random.default_rng(seed).permutation(n)
    n_pool = int(round(train_frac * n))
    n_pool = min(max(n_pool, 2), n - 1)
    n_val = int(round(val_frac * n_pool))
    if n_pool - n_val < 2:
        n_val = max(0, n_pool - 2)
    pool = perm[:n_pool]
    test = perm[n_pool:]
    val = pool[:n_val]
    train = pool[n_val:]
    assert not (set(train) & set(val)) and not (set(train) & set(test)) and not (set(val) & set(test))
    return train, val, test


def run_experiment(
    manifest: DatasetManifest,
    saliency: SaliencyModel,
    config: QualityConfig | None = None,
    runs: int = 10,
    seed: int = 0,
    train_frac: float = 0.8,
    val_frac: float = 0.1,
    measure_timing: bool = True,
    image_provider=None,
) -> MetricsReport:
    """Train and evaluate over repeated random splits; aggregate by medians."""
    config = config or QualityConfig()
    entries = manifest.entries
    n = len(entries)
    if n < 5:
        raise InsufficientDataError(f"need at least 5 images to evaluate, got {n}")
    provider = image_provider or ImageCache()

    report = MetricsReport(
        protocol={
            "runs": runs,
            "seed": seed,
            "train_frac": train_frac,
            "val_frac": val_frac,
            "n_images": n,
            "config": config.to_dict(),
        }
    )
    plccs, sroccs = [], []
    times_ms: list[float] = []
    for r in range(runs):
        run_seed = seed * 1009 + r
        rec = RunRecord(run=r, seed=run_seed)
        train_idx, val_idx, test_idx = split_indices(n, run_seed, train_frac, val_frac)
        rec.n_train, rec.n_val, rec.n_test = len(train_idx), len(val_idx), len(test_idx)
        train_entries = [entries[i] for i in train_idx]
        val_entries = [entries[i] for i in val_idx]
        test_entries = [entries[i] for i in test_idx]
        try:
            run_config = QualityConfig.from_dict(config.to_dict())
            run_config.seed = run_seed
            t0 = time.perf_counter()
            model = train_pipeline(
                train_entries, val_entries or None, saliency, run_config, provider
            )
            if measure_timing:
                rec.train_seconds = round(time.perf_counter() - t0, 3)

            preds = np.empty(len(test_entries))
            for i, (path, _) in enumerate(test_entries):
                img = provider(path)
                t1 = time.perf_counter()
                preds[i] = predict_quality(model, img)
                if measure_timing and r == 0:
                    times_ms.append((time.perf_counter() - t1) * 1000.0)
            truth = np.array([mos for _, mos in test_entries])
            rec.plcc = round(float(plcc(preds, truth)), 6)
            rec.srocc = round(float(srocc(preds, truth)), 6)
            plccs.append(rec.plcc)
            sroccs.append(rec.srocc)
            if r == 0:
                report.model_size_bytes = len(model_to_bytes(model))
        except (InsufficientDataError, UndefinedMetricError) as exc:
            rec.error = f"{type(exc).__name__}: {exc}"
        report.runs.append(rec)

    if plccs:
        report.median_plcc = round(float(np.median(plccs)), 6)
        report.median_srocc = round(float(np.median(sroccs)), 6)
    if measure_timing and times_ms:
        report.timing_ms_per_image = round(float(np.median(times_ms)), 3)
    return report
