"""End-to-end quality model: local crop regression with iterative target
relaxation, then saliency-guided global aggregation.

Training: every image contributes k crop windows (most-salient first); fused
crop features are relevance-ranked and a boosted-tree regressor is fitted to
per-crop targets initialized at the image score.  The targets are then relaxed
toward the regressor's own predictions while keeping each image's mean target
on its score, and the regressor is refitted for a few outer rounds; a
validation split picks the best round.  The global stage sorts the k local
scores and appends saliency statistics (per-crop mean/std/max, a map
histogram) and the relevance-selected coarse-layer descriptor, then fits a
second small ensemble on the image scores.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .errors import InsufficientDataError, InvalidInputError, InvalidStateError
from .features import (
    FeatureConfig,
    TransformState,
    extract_fused_batch,
    fit_transform_state,
    fused_layout,
    global_layer_descriptor,
    state_from_arrays,
    state_to_arrays,
)
from .gbrt import GbrtParams, TreeEnsemble, gbrt_fit, gbrt_predict, ensemble_from_arrays, ensemble_to_arrays
from .imageio import (
    YUV,
    RasterImage,
    convert_colorspace,
    crop_candidates,
    ensure_min_side,
    load_image,
)
from .metrics import srocc
from .modelio import container_bytes, read_container, write_container
from .saliency import (
    LayerFeatures,
    SaliencyModel,
    average_saliency_score,
    build_layer_features,
    predict_from_layers,
    saliency_from_arrays,
    saliency_to_arrays,
    select_random_crops,
    select_top_crops,
)
from .selection import RftSelection, rft_apply, rft_rank

MODEL_KIND = "quality"


@dataclass
class QualityConfig:
    crop_size: int = 256
    crop_stride: int = 32
    crops_per_image: int = 35
    local_keep: int = 3000
    global_keep: int = 600
    hist_bins: int = 60
    rft_bins: int = 16
    outer_rounds: int = 3
    relax_step: float = 1.0
    relax_tol: float = 1e-4
    use_saliency_crop: bool = True
    use_saliency_global: bool = True
    local_iterative: bool = True
    kernel_sample_crops: int = 120
    local_gbrt: GbrtParams = field(
        default_factory=lambda: GbrtParams(
            rounds=110, max_depth=4, shrinkage=0.1, min_samples_leaf=5, colsample=0.25
        )
    )
    global_gbrt: GbrtParams = field(
        default_factory=lambda: GbrtParams(
            rounds=200, max_depth=3, shrinkage=0.05, min_samples_leaf=5
        )
    )
    feature: FeatureConfig = field(default_factory=FeatureConfig)
    seed: int = 0

    def validate(self) -> None:
        if self.crops_per_image < 1:
            raise InvalidInputError("crops_per_image must be >= 1")
        if self.crop_stride < 1:
            raise InvalidInputError("crop_stride must be >= 1")
        if self.outer_rounds < 1:
            raise InvalidInputError("outer_rounds must be >= 1")
        if not 0.0 < self.relax_step <= 2.0:
            raise InvalidInputError("relax_step must be in (0, 2]")
        if self.hist_bins < 1:
            raise InvalidInputError("hist_bins must be >= 1")
        if self.crop_size != self.feature.crop_size:
            raise InvalidInputError("crop_size must match feature.crop_size")
        self.feature.validate()
        self.local_gbrt.validate()
        self.global_gbrt.validate()

    def to_dict(self) -> dict[str, Any]:
        d = {
            k: v
            for k, v in self.__dict__.items()
            if k not in ("local_gbrt", "global_gbrt", "feature")
        }
        d["local_gbrt"] = self.local_gbrt.to_dict()
        d["global_gbrt"] = self.global_gbrt.to_dict()
        d["feature"] = self.feature.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "QualityConfig":
        d = dict(d)
        local = GbrtParams.from_dict(d.pop("local_gbrt"))
        glob = GbrtParams.from_dict(d.pop("global_gbrt"))
        feat = FeatureConfig.from_dict(d.pop("feature"))
        return cls(local_gbrt=local, global_gbrt=glob, feature=feat, **d)


def config_with_overrides(base: QualityConfig, overrides: dict[str, Any]) -> QualityConfig:
    """Apply a (possibly nested) override dict onto a config."""
    d = base.to_dict()
    for key, value in overrides.items():
        if key in ("local_gbrt", "global_gbrt", "feature") and isinstance(value, dict):
            d[key] = {**d[key], **value}
        else:
            d[key] = value
    cfg = QualityConfig.from_dict(d)
    cfg.validate()
    return cfg


@dataclass
class QualityLabels:
    """Per-image scores and the per-crop regression targets derived from them."""

    image_scores: np.ndarray  # (J,)
    crop_targets: np.ndarray  # (J, k)


@dataclass
class LocalTrainResult:
    ensemble: TreeEnsemble
    labels: QualityLabels
    rounds_run: int
    best_round: int
    discrepancies: list[float]
    val_scores: list[float]
    target_rounds: list[np.ndarray]


@dataclass
class QualityModel:
    config: QualityConfig
    saliency: SaliencyModel
    transforms: TransformState
    local_selection: RftSelection
    local_ensemble: TreeEnsemble
    global_selection: RftSelection | None
    global_ensemble: TreeEnsemble
    score_range: tuple[float, float]


def _derive_seed(base: int, offset: int) -> int:
    return (base * 1000003 + offset) % (2**31 - 1)


# ---------------------------------------------------------------------------
# Local stage
# ---------------------------------------------------------------------------

def relax_targets(
    targets: np.ndarray, predictions: np.ndarray, image_scores: np.ndarray, step: float
) -> np.ndarray:
    """One relaxation update of the (J, k) crop targets.

    Moves each crop target toward the model's prediction while re-centering so
    the per-image mean stays on the image score when step == 1.
    """
    p = np.asarray(predictions, dtype=np.float64)
    q = np.asarray(image_scores, dtype=np.float64)
    pmean = p.mean(axis=1)
    if step == 1.0:
        # Reassociated form of p + (q - mean): the per-image mean lands on q
        # exactly, and with a single crop the target is exactly q.
        return q[:, None] + (p - pmean[:, None])
    return p + step * (q - pmean)[:, None]


def train_local(
    features: np.ndarray,
    image_scores: np.ndarray,
    config: QualityConfig,
    val_features: np.ndarray | None = None,
    val_scores: np.ndarray | None = None,
) -> LocalTrainResult:
    """Fit the local crop regressor with iterative target relaxation.

    Args:
        features: (J, k, D) selected features, one row of k crops per image.
        image_scores: (J,) image quality scores.
        config: uses ``local_gbrt``, ``outer_rounds``, ``relax_step``,
            ``relax_tol`` and ``local_iterative``.
        val_features / val_scores: optional (V, k, D) and (V,); when given, the
            outer round whose mean local prediction ranks the validation images
            best is returned.
    """
    x = np.asarray(features)
    if x.ndim != 3:
        raise InvalidInputError(f"expected (J, k, D) features, got shape {x.shape}")
    j, k, d = x.shape
    q = np.asarray(image_scores, dtype=np.float64)
    if q.shape != (j,):
        raise InvalidInputError(f"image_scores shape {q.shape} does not match {j} images")
    flat = x.reshape(j * k, d)
    rounds = config.outer_rounds if config.local_iterative else 1

    targets = np.repeat(q, k).reshape(j, k)
    target_rounds: list[np.ndarray] = []
    discrepancies: list[float] = []
    val_track: list[float] = []
    best: tuple[float, int, TreeEnsemble] | None = None
    prev_disc: float | None = None
    ensemble: TreeEnsemble | None = None

    for r in range(rounds):
        params = GbrtParams.from_dict(config.local_gbrt.to_dict())
        params.seed = _derive_seed(config.seed, r)
        ensemble = gbrt_fit(flat, targets.reshape(-1), params)
        p = gbrt_predict(ensemble, flat).reshape(j, k)
        disc = float(np.max(np.abs(q - p.mean(axis=1))))
        discrepancies.append(disc)

        if val_features is not None and val_scores is not None and len(val_scores) >= 2:
            vx = np.asarray(val_features)
            vp = gbrt_predict(ensemble, vx.reshape(-1, d)).reshape(vx.shape[0], vx.shape[1])
            try:
                score = srocc(vp.mean(axis=1), val_scores)
            except Exception:
                score = -np.inf
        else:
            score = float(r)  # no validation: prefer the latest round
        val_track.append(float(score))
        if best is None or score > best[0]:
            best = (score, r, ensemble)

        targets = relax_targets(targets, p, q, config.relax_step)
        target_rounds.append(targets.copy())
        if prev_disc is not None and abs(prev_disc - disc) < config.relax_tol:
            break
        prev_disc = disc

    assert best is not None and ensemble is not None
    labels = QualityLabels(image_scores=q, crop_targets=targets)
    return LocalTrainResult(
        ensemble=best[2],
        labels=labels,
        rounds_run=len(discrepancies),
        best_round=best[1],
        discrepancies=discrepancies,
        val_scores=val_track,
        target_rounds=target_rounds,
    )


def predict_local(model: QualityModel, fused_features: np.ndarray) -> np.ndarray:
    """Local quality score of each fused crop feature row."""
    keep = min(model.config.local_keep, model.local_selection.dim)
    sel = rft_apply(model.local_selection, fused_features, keep)
    return gbrt_predict(model.local_ensemble, sel)


# ---------------------------------------------------------------------------
# Global stage
# ---------------------------------------------------------------------------

def saliency_statistics(
    saliency_map: np.ndarray, windows: Sequence, hist_bins: int
) -> np.ndarray:
    """Per-crop saliency (mean, std, max) triplets plus a global map histogram."""
    m = np.asarray(saliency_map, dtype=np.float64)
    stats = np.empty((len(windows), 3), dtype=np.float64)
    for i, w in enumerate(windows):
        patch = m[w.row : w.row + w.size, w.col : w.col + w.size]
        stats[i] = (patch.mean(), patch.std(), patch.max())
    hist, _ = np.histogram(m, bins=hist_bins, range=(0.0, 1.0))
    hist = hist.astype(np.float64) / m.size
    return np.concatenate([stats.reshape(-1), hist]).astype(np.float32)


def assemble_global_features(
    local_scores: np.ndarray,
    saliency_map: np.ndarray | None,
    windows: Sequence | None,
    coarse_descriptor: np.ndarray | None,
    global_selection: RftSelection | None,
    config: QualityConfig,
) -> np.ndarray:
    """Build one image's global feature vector.

    Always starts with the k local scores sorted descending; when the
    saliency-guided global branch is enabled it appends the saliency
    statistics and the relevance-selected coarse-layer descriptor.
    """
    scores = np.sort(np.asarray(local_scores, dtype=np.float64))[::-1].astype(np.float32)
    if not config.use_saliency_global:
        return scores
    if saliency_map is None or windows is None or coarse_descriptor is None or global_selection is None:
        raise InvalidInputError("saliency-guided global features require map, windows and descriptor")
    stats = saliency_statistics(saliency_map, windows, config.hist_bins)
    keep = min(config.global_keep, global_selection.dim)
    selected = rft_apply(global_selection, coarse_descriptor[None], keep)[0].astype(np.float32)
    return np.concatenate([scores, stats, selected])


def global_feature_length(config: QualityConfig, descriptor_dim: int) -> int:
    k = config.crops_per_image
    if not config.use_saliency_global:
        return k
    return k + 3 * k + config.hist_bins + min(config.global_keep, descriptor_dim)


# ---------------------------------------------------------------------------
# Whole-pipeline training and prediction
# ---------------------------------------------------------------------------

@dataclass
class _ImagePrep:
    layers: LayerFeatures
    saliency_map: np.ndarray | None
    windows: list


def _prepare_image(
    img: RasterImage,
    saliency: SaliencyModel,
    config: QualityConfig,
    crop_rng: np.random.Generator,
) -> tuple[RasterImage, _ImagePrep]:
    img = ensure_min_side(img, config.crop_size)
    layers = build_layer_features(saliency.kernels, img, saliency.config)
    need_map = config.use_saliency_crop or config.use_saliency_global
    smap = predict_from_layers(saliency, layers, (img.height, img.width)) if need_map else None
    cands = crop_candidates(img.height, img.width, config.crop_size, config.crop_stride)
    if config.use_saliency_crop:
        windows = select_top_crops(smap, cands, config.crops_per_image)
    else:
        windows = select_random_crops(cands, config.crops_per_image, crop_rng)
    return img, _ImagePrep(layers=layers, saliency_map=smap, windows=windows)


ImageProvider = Callable[[str], RasterImage]


def train_pipeline(
    train_entries: Sequence[tuple[str, float]],
    val_entries: Sequence[tuple[str, float]] | None,
    saliency: SaliencyModel,
    config: QualityConfig | None = None,
    image_provider: ImageProvider | None = None,
) -> QualityModel:
    """Train the full quality model.

    Args:
        train_entries: (image path, score) pairs.
        val_entries: optional held-out pairs used to pick the best relaxation
            round.
        saliency: a fitted saliency model (kernels are reused for the fused
            crop descriptors even when both saliency ablations are active).
        config: pipeline configuration; ``config.seed`` drives every random
            choice.
        image_provider: optional loader override (defaults to decoding from
            disk); useful for cached in-memory datasets.
    """
    config = config or QualityConfig()
    config.validate()
    if not saliency.fitted:
        raise InvalidStateError("saliency model is not fitted")
    entries = list(train_entries)
    if len(entries) < 2:
        raise InsufficientDataError(f"need at least 2 training images, got {len(entries)}")
    provider = image_provider or (lambda p: load_image(p))
    rng = np.random.default_rng(config.seed)
    crop_rng = np.random.default_rng(_derive_seed(config.seed, 101))

    # Fit the feature transforms on a sample of crops drawn across images.
    per_img = -(-config.kernel_sample_crops // len(entries))
    n_sample_imgs = min(len(entries), -(-config.kernel_sample_crops // per_img))
    sample_ids = rng.permutation(len(entries))[:n_sample_imgs]
    sample_crops = []
    for idx in sample_ids:
        img, prep = _prepare_image(provider(entries[idx][0]), saliency, config, crop_rng)
        yuv = convert_colorspace(img, YUV).samples
        for w in prep.windows[:per_img]:
            sample_crops.append(
                yuv[w.row : w.row + w.size, w.col : w.col + w.size].transpose(2, 0, 1)
            )
    state = fit_transform_state(np.stack(sample_crops), config.feature, rng)

    def featurize(pairs: Sequence[tuple[str, float]]):
        feats, descs, stats_maps, windows_all = [], [], [], []
        for path, _ in pairs:
            img, prep = _prepare_image(provider(path), saliency, config, crop_rng)
            feats.append(extract_fused_batch(img, prep.windows, state, prep.layers))
            descs.append(global_layer_descriptor(prep.layers, config.feature.d16_grid))
            stats_maps.append(prep.saliency_map)
            windows_all.append(prep.windows)
        return np.stack(feats), np.stack(descs), stats_maps, windows_all

    x_local, d16, smaps, windows_all = featurize(entries)
    q = np.array([score for _, score in entries], dtype=np.float64)

    j, k, dim = x_local.shape
    local_selection = rft_rank(
        x_local.reshape(j * k, dim), np.repeat(q, k), bins=config.rft_bins
    )
    keep = min(config.local_keep, local_selection.dim)
    x_sel = rft_apply(local_selection, x_local.reshape(j * k, dim), keep).reshape(j, k, keep)

    val_sel = val_q = None
    val_data = None
    if val_entries:
        val_data = featurize(val_entries)
        vx, _, _, _ = val_data
        val_sel = rft_apply(local_selection, vx.reshape(-1, dim), keep).reshape(
            vx.shape[0], k, keep
        )
        val_q = np.array([score for _, score in val_entries], dtype=np.float64)

    local = train_local(x_sel, q, config, val_sel, val_q)

    local_scores = gbrt_predict(local.ensemble, x_sel.reshape(j * k, keep)).reshape(j, k)

    global_selection = None
    if config.use_saliency_global:
        global_selection = rft_rank(d16, q, bins=config.rft_bins)
    g_rows = [
        assemble_global_features(
            local_scores[i], smaps[i], windows_all[i], d16[i], global_selection, config
        )
        for i in range(j)
    ]
    g = np.stack(g_rows)
    g_params = GbrtParams.from_dict(config.global_gbrt.to_dict())
    g_params.seed = _derive_seed(config.seed, 777)
    global_ensemble = gbrt_fit(g, q, g_params)

    return QualityModel(
        config=config,
        saliency=saliency,
        transforms=state,
        local_selection=local_selection,
        local_ensemble=local.ensemble,
        global_selection=global_selection,
        global_ensemble=global_ensemble,
        score_range=(float(q.min()), float(q.max())),
    )


def predict_quality(model: QualityModel, img: RasterImage) -> float:
    """Predict the quality score of one decoded image."""
    if img.channels != 3:
        raise InvalidInputError("quality prediction expects a 3-channel image")
    config = model.config
    crop_rng = np.random.default_rng(_derive_seed(config.seed, 101))
    img, prep = _prepare_image(img, model.saliency, config, crop_rng)
    fused = extract_fused_batch(img, prep.windows, model.transforms, prep.layers)
    scores = predict_local(model, fused)
    desc = (
        global_layer_descriptor(prep.layers, config.feature.d16_grid)
        if config.use_saliency_global
        else None
    )
    g = assemble_global_features(
        scores, prep.saliency_map, prep.windows, desc, model.global_selection, config
    )
    raw = float(gbrt_predict(model.global_ensemble, g[None])[0])
    lo, hi = model.score_range
    return float(min(max(raw, lo), hi))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def model_to_bytes(model: QualityModel) -> bytes:
    return container_bytes(MODEL_KIND, _model_config(model), _model_arrays(model))


def save_model(path: str | Path, model: QualityModel) -> int:
    """Write the model container; returns the file size in bytes."""
    return write_container(path, MODEL_KIND, _model_config(model), _model_arrays(model))


def _model_config(model: QualityModel) -> dict[str, Any]:
    return {
        "quality": model.config.to_dict(),
        "saliency": model.saliency.config.to_dict(),
        "score_range": [float(model.score_range[0]), float(model.score_range[1])],
        "has_global_selection": model.global_selection is not None,
    }


def _model_arrays(model: QualityModel) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    for name, arr in saliency_to_arrays(model.saliency).items():
        arrays[f"sal_{name}"] = arr
    for name, arr in state_to_arrays(model.transforms).items():
        arrays[f"feat_{name}"] = arr
    arrays["lsel_ranked"] = model.local_selection.ranked
    arrays["lsel_losses"] = model.local_selection.losses
    for name, arr in ensemble_to_arrays(model.local_ensemble).items():
        arrays[f"lgbrt_{name}"] = arr
    if model.global_selection is not None:
        arrays["gsel_ranked"] = model.global_selection.ranked
        arrays["gsel_losses"] = model.global_selection.losses
    for name, arr in ensemble_to_arrays(model.global_ensemble).items():
        arrays[f"ggbrt_{name}"] = arr
    return arrays


def load_model(path: str | Path) -> QualityModel:
    kind, config, arrays = read_container(path)
    if kind != MODEL_KIND:
        raise InvalidStateError(f"expected a {MODEL_KIND} model, found {kind!r}")
    return _model_from(config, arrays)


def model_from_bytes(data: bytes) -> QualityModel:
    import io

    kind, config, arrays = read_container(io.BytesIO(data))
    if kind != MODEL_KIND:
        raise InvalidStateError(f"expected a {MODEL_KIND} model, found {kind!r}")
    return _model_from(config, arrays)


def _model_from(config: dict[str, Any], arrays: dict[str, np.ndarray]) -> QualityModel:
    from .saliency import SaliencyConfig

    qcfg = QualityConfig.from_dict(config["quality"])
    scfg = SaliencyConfig.from_dict(config["saliency"])
    sal_arrays = {k[len("sal_"):]: v for k, v in arrays.items() if k.startswith("sal_")}
    feat_arrays = {k[len("feat_"):]: v for k, v in arrays.items() if k.startswith("feat_")}
    saliency = saliency_from_arrays(scfg, sal_arrays)
    state = state_from_arrays(qcfg.feature, feat_arrays)
    local_selection = RftSelection(
        ranked=arrays["lsel_ranked"], losses=arrays["lsel_losses"], bins=qcfg.rft_bins
    )
    local_ensemble = ensemble_from_arrays(
        {k[len("lgbrt_"):]: v for k, v in arrays.items() if k.startswith("lgbrt_")}
    )
    global_selection = None
    if config.get("has_global_selection"):
        global_selection = RftSelection(
            ranked=arrays["gsel_ranked"], losses=arrays["gsel_losses"], bins=qcfg.rft_bins
        )
    global_ensemble = ensemble_from_arrays(
        {k[len("ggbrt_"):]: v for k, v in arrays.items() if k.startswith("ggbrt_")}
    )
    lo, hi = config["score_range"]
    return QualityModel(
        config=qcfg,
        saliency=saliency,
        transforms=state,
        local_selection=local_selection,
        local_ensemble=local_ensemble,
        global_selection=global_selection,
        global_ensemble=global_ensemble,
        score_range=(float(lo), float(hi)),
    )
