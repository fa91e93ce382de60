"""Learned visual-saliency maps and saliency-guided crop selection.

The detector computes a small cascade per scale (luminance downsampled by 4,
8, and 16): a 2x2 Saab hop, 2x2 max pooling, then a 4x4 stride-2 Saab hop on
the pooled DC channel.  Each scale contributes its pooled DC channel plus all
second-hop channels; the three scales are resampled onto a common coarse grid
and a boosted-tree regressor maps each grid location's feature vector to the
ground-truth saliency averaged over that cell.  The predicted grid is
bilinearly upsampled to full resolution and clamped to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .errors import InsufficientDataError, InvalidInputError, InvalidStateError
from .gbrt import GbrtParams, TreeEnsemble, gbrt_fit, gbrt_predict
from .imageio import CropWindow, RasterImage, block_mean, luminance, resize_plane
from .selection import RftSelection, rft_apply, rft_rank
from .transforms import SaabKernelSet, extract_patches, max_pool2, saab_apply, saab_fit

SCALES = (4, 8, 16)
MIN_IMAGE_SIDE = 64
_GRID_FACTOR = 16  # prediction grid cell size in original pixels


@dataclass
class SaliencyConfig:
    hop1_size: int = 2
    hop2_size: int = 4
    hop2_stride: int = 2
    rft_keep: int = 1000
    rft_bins: int = 16
    max_patches_per_image: int = 1500
    max_train_locations: int = 60000
    gbrt: GbrtParams = field(
        default_factory=lambda: GbrtParams(rounds=150, max_depth=4, shrinkage=0.1)
    )
    seed: int = 0

    def to_dict(self) -> dict[str, Any]:
        d = {k: v for k, v in self.__dict__.items() if k != "gbrt"}
        d["gbrt"] = self.gbrt.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SaliencyConfig":
        d = dict(d)
        gbrt = GbrtParams.from_dict(d.pop("gbrt"))
        return cls(gbrt=gbrt, **d)


@dataclass
class ScaleKernels:
    hop1: SaabKernelSet
    hop2: SaabKernelSet


@dataclass
class LayerFeatures:
    """Per-scale channel tensors plus the fused coarse feature grid.

    ``tensors[s]`` has 17 channels (pooled first-hop DC, then the 16 second-hop
    channels) at roughly 1/(2s) of the original resolution.  ``grid`` stacks
    all scales resampled to the common prediction grid: (51, gh, gw).
    """

    tensors: dict[int, np.ndarray]
    grid: np.ndarray

    @property
    def grid_hw(self) -> tuple[int, int]:
        return self.grid.shape[1], self.grid.shape[2]


@dataclass
class SaliencyModel:
    config: SaliencyConfig
    kernels: dict[int, ScaleKernels] | None = None
    selection: RftSelection | None = None
    ensemble: TreeEnsemble | None = None

    @property
    def fitted(self) -> bool:
        return self.kernels is not None and self.selection is not None and self.ensemble is not None


def _validate_image(img: RasterImage) -> None:
    if min(img.height, img.width) < MIN_IMAGE_SIDE:
        raise InvalidInputError(
            f"image {img.height}x{img.width} is smaller than "
            f"{MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}"
        )


def fit_scale_kernels(
    images: Sequence[RasterImage], config: SaliencyConfig, rng: np.random.Generator
) -> dict[int, ScaleKernels]:
    """Fit the two Saab hops of every scale from a sample of training images."""
    if not images:
        raise InsufficientDataError("no images to fit saliency kernels")
    for img in images:
        _validate_image(img)
    lums = [luminance(img) for img in images]
    kernels: dict[int, ScaleKernels] = {}
    for s in SCALES:
        h1_shape = (1, config.hop1_size, config.hop1_size)
        h1_samples = []
        for lum in lums:
            patches, _ = extract_patches(block_mean(lum, s), h1_shape, stride=1)
            h1_samples.append(_subsample_rows(patches, config.max_patches_per_image, rng))
        hop1 = saab_fit(np.concatenate(h1_samples), h1_shape)
        pooled_dcs = []
        for lum in lums:
            responses = saab_apply(hop1, block_mean(lum, s), stride=1)
            pooled_dcs.append(max_pool2(responses)[:1])
        h2_shape = (1, config.hop2_size, config.hop2_size)
        h2_samples = []
        for dc in pooled_dcs:
            patches, _ = extract_patches(dc, h2_shape, stride=config.hop2_stride)
            h2_samples.append(_subsample_rows(patches, config.max_patches_per_image, rng))
        hop2 = saab_fit(np.concatenate(h2_samples), h2_shape)
        kernels[s] = ScaleKernels(hop1=hop1, hop2=hop2)
    return kernels


def _subsample_rows(x: np.ndarray, cap: int, rng: np.random.Generator) -> np.ndarray:
    if x.shape[0] <= cap:
        return x
    idx = np.sort(rng.choice(x.shape[0], size=cap, replace=False))
    return x[idx]


def build_layer_features(
    kernels: dict[int, ScaleKernels], img: RasterImage, config: SaliencyConfig
) -> LayerFeatures:
    """Compute the per-scale tensors and the fused prediction grid for one image."""
    _validate_image(img)
    lum = luminance(img)
    gh = -(-img.height // _GRID_FACTOR)
    gw = -(-img.width // _GRID_FACTOR)
    tensors: dict[int, np.ndarray] = {}
    grid_parts = []
    for s in SCALES:
        ks = kernels[s]
        hop1 = saab_apply(ks.hop1, block_mean(lum, s), stride=1)
        pooled = max_pool2(hop1)
        hop2 = saab_apply(ks.hop2, pooled[:1], stride=config.hop2_stride)
        ph, pw = pooled.shape[1], pooled.shape[2]
        hop2_up = _resize_tensor(hop2, (ph, pw))
        tensor = np.concatenate([pooled[:1], hop2_up], axis=0)
        tensors[s] = tensor
        grid_parts.append(_resize_tensor(tensor, (gh, gw)))
    return LayerFeatures(tensors=tensors, grid=np.concatenate(grid_parts, axis=0))


def _resize_tensor(tensor: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Resize (C, H, W) -> (C, h, w): area when shrinking, bilinear otherwise.

    Channels are resized in groups of four (the widest layout every OpenCV
    interpolation path accepts).
    """
    c, h, w = tensor.shape
    oh, ow = out_hw
    if (h, w) == (oh, ow):
        return tensor.astype(np.float32, copy=False)
    mode = "area" if (oh <= h and ow <= w) else "bilinear"
    out = np.empty((c, oh, ow), dtype=np.float32)
    for lo in range(0, c, 4):
        hi = min(lo + 4, c)
        hwc = np.ascontiguousarray(tensor[lo:hi].transpose(1, 2, 0))
        part = resize_plane(hwc, (oh, ow), mode=mode)
        if part.ndim == 2:
            part = part[:, :, None]
        out[lo:hi] = part.transpose(2, 0, 1)
    return out


def _grid_matrix(layers: LayerFeatures) -> np.ndarray:
    g = layers.grid
    return np.ascontiguousarray(g.reshape(g.shape[0], -1).T)


def saliency_train(
    images: Sequence[RasterImage],
    maps: Sequence[np.ndarray],
    config: SaliencyConfig | None = None,
) -> SaliencyModel:
    """Train the saliency detector from images and ground-truth maps in [0, 1].

    Kernels are fitted on the images, then every grid location of every image
    becomes one training sample (cell-averaged ground truth as target); the
    location pool is subsampled to ``config.max_train_locations`` before
    relevance ranking and boosting.
    """
    config = config or SaliencyConfig()
    if len(images) != len(maps):
        raise InvalidInputError(
            f"{len(images)} images but {len(maps)} ground-truth maps"
        )
    if not images:
        raise InsufficientDataError("no training images")
    for img, m in zip(images, maps):
        if m.shape != (img.height, img.width):
            raise InvalidInputError(
                f"map shape {m.shape} does not match image {img.height}x{img.width}"
            )
    rng = np.random.default_rng(config.seed)
    kernels = fit_scale_kernels(images, config, rng)

    feats = []
    targets = []
    for img, m in zip(images, maps):
        layers = build_layer_features(kernels, img, config)
        gh, gw = layers.grid_hw
        feats.append(_grid_matrix(layers))
        cell = resize_plane(np.asarray(m, dtype=np.float32), (gh, gw), mode="area")
        targets.append(cell.reshape(-1).astype(np.float64))
    x = np.concatenate(feats)
    y = np.concatenate(targets)
    if x.shape[0] > config.max_train_locations:
        idx = np.sort(rng.choice(x.shape[0], size=config.max_train_locations, replace=False))
        x, y = x[idx], y[idx]

    selection = rft_rank(x, y, bins=config.rft_bins)
    keep = min(config.rft_keep, selection.dim)
    params = GbrtParams.from_dict(config.gbrt.to_dict())
    params.seed = config.seed
    ensemble = gbrt_fit(rft_apply(selection, x, keep), y, params)
    return SaliencyModel(config=config, kernels=kernels, selection=selection, ensemble=ensemble)


def saliency_predict(model: SaliencyModel, img: RasterImage) -> np.ndarray:
    """Predict a full-resolution saliency map in [0, 1] (float32, (H, W))."""
    if not model.fitted:
        raise InvalidStateError("saliency model is not fitted")
    layers = build_layer_features(model.kernels, img, model.config)
    return predict_from_layers(model, layers, (img.height, img.width))


def predict_from_layers(
    model: SaliencyModel, layers: LayerFeatures, out_hw: tuple[int, int]
) -> np.ndarray:
    """Predict the map from precomputed layer features (avoids recomputation)."""
    if not model.fitted:
        raise InvalidStateError("saliency model is not fitted")
    x = _grid_matrix(layers)
    keep = min(model.config.rft_keep, model.selection.dim)
    raw = gbrt_predict(model.ensemble, rft_apply(model.selection, x, keep))
    gh, gw = layers.grid_hw
    coarse = np.clip(raw, 0.0, 1.0).astype(np.float32).reshape(gh, gw)
    full = resize_plane(coarse, out_hw, mode="bilinear")
    return np.clip(full, 0.0, 1.0)


def average_saliency_score(saliency_map: np.ndarray, window: CropWindow) -> float:
    """Mean saliency inside a crop window."""
    m = np.asarray(saliency_map)
    r, c, s = window.row, window.col, window.size
    if r < 0 or c < 0 or r + s > m.shape[0] or c + s > m.shape[1]:
        raise InvalidInputError("crop window exceeds map bounds")
    return float(m[r : r + s, c : c + s].mean(dtype=np.float64))


def select_top_crops(
    saliency_map: np.ndarray, candidates: Sequence[CropWindow], k: int
) -> list[CropWindow]:
    """The k most salient candidate windows, by descending mean saliency.

    Ties keep candidate order; when fewer than k candidates exist the ranked
    list is repeated cyclically until k windows are returned.
    """
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    if not candidates:
        raise InvalidInputError("no crop candidates")
    scores = np.array(
        [average_saliency_score(saliency_map, w) for w in candidates], dtype=np.float64
    )
    order = np.argsort(-scores, kind="stable")
    ranked = [candidates[i] for i in order]
    return [ranked[i % len(ranked)] for i in range(k)]


def select_random_crops(
    candidates: Sequence[CropWindow], k: int, rng: np.random.Generator
) -> list[CropWindow]:
    """Saliency-free fallback: a random permutation, repeated cyclically to k."""
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    if not candidates:
        raise InvalidInputError("no crop candidates")
    order = rng.permutation(len(candidates))
    ranked = [candidates[i] for i in order]
    return [ranked[i % len(ranked)] for i in range(k)]


# ---------------------------------------------------------------------------
# Serialization helpers (used by the quality-model container)
# ---------------------------------------------------------------------------

def saliency_to_arrays(model: SaliencyModel) -> dict[str, np.ndarray]:
    if not model.fitted:
        raise InvalidStateError("saliency model is not fitted")
    from .gbrt import ensemble_to_arrays

    arrays: dict[str, np.ndarray] = {}
    for s in SCALES:
        ks = model.kernels[s]
        for hop_name, hop in (("hop1", ks.hop1), ("hop2", ks.hop2)):
            prefix = f"s{s}_{hop_name}"
            arrays[f"{prefix}_shape"] = np.array(hop.patch_shape, dtype=np.uint32)
            arrays[f"{prefix}_dc"] = hop.dc_kernel
            arrays[f"{prefix}_ac"] = hop.ac_kernels
            arrays[f"{prefix}_energy"] = hop.energies
    arrays["rft_ranked"] = model.selection.ranked
    arrays["rft_losses"] = model.selection.losses
    for name, arr in ensemble_to_arrays(model.ensemble).items():
        arrays[f"gbrt_{name}"] = arr
    return arrays


def saliency_from_arrays(config: SaliencyConfig, arrays: dict[str, np.ndarray]) -> SaliencyModel:
    from .gbrt import ensemble_from_arrays

    kernels: dict[int, ScaleKernels] = {}
    for s in SCALES:
        hops = {}
        for hop_name in ("hop1", "hop2"):
            prefix = f"s{s}_{hop_name}"
            hops[hop_name] = SaabKernelSet(
                patch_shape=tuple(int(v) for v in arrays[f"{prefix}_shape"]),
                dc_kernel=arrays[f"{prefix}_dc"],
                ac_kernels=arrays[f"{prefix}_ac"],
                energies=arrays[f"{prefix}_energy"],
            )
        kernels[s] = ScaleKernels(hop1=hops["hop1"], hop2=hops["hop2"])
    selection = RftSelection(
        ranked=arrays["rft_ranked"],
        losses=arrays["rft_losses"],
        bins=config.rft_bins,
    )
    gbrt_arrays = {k[len("gbrt_"):]: v for k, v in arrays.items() if k.startswith("gbrt_")}
    return SaliencyModel(
        config=config,
        kernels=kernels,
        selection=selection,
        ensemble=ensemble_from_arrays(gbrt_arrays),
    )
