"""Perceptual feature extraction for square crops.

Two cascades feed the local quality regressor: a luminance path (block DCT,
max pooling, two Saab hops on the DC maps, per-channel statistics, and a
shared region PCA) and a spatio-color path (4x4x3 Saab cuboids over YUV with a
second hop on the DC map).  Crop descriptors pooled from the saliency layers
are fused alongside so every crop is summarized by one flat vector with a
fixed segment layout.

All fitted bases are float32; projections run in float64 and round once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .errors import InsufficientDataError, InvalidInputError
from .imageio import YUV, RasterImage, convert_colorspace
from .saliency import LayerFeatures, _resize_tensor
from .transforms import (
    PcaBasis,
    SaabKernelSet,
    block_dct_batch,
    pca_fit,
    saab_fit,
)


@dataclass
class FeatureConfig:
    crop_size: int = 256
    dct_block: int = 8
    hop_patch: int = 4
    dct_region_channels: int = 16
    hop1_region_channels: int = 2
    color_region_channels: int = 12
    region: tuple[int, int] = (2, 2)
    region_keep: int = 2
    d4_grid: int = 8
    d8_grid: int = 4
    d16_grid: int = 8
    max_fit_vectors: int = 200000

    def validate(self) -> None:
        unit = self.dct_block * self.hop_patch * self.hop_patch
        if self.crop_size % unit != 0:
            raise InvalidInputError(
                f"crop_size must be a multiple of {unit}, got {self.crop_size}"
            )
        if not 1 <= self.dct_region_channels <= self.dct_block**2:
            raise InvalidInputError("dct_region_channels out of range")
        if not 1 <= self.hop1_region_channels <= self.hop_patch**2:
            raise InvalidInputError("hop1_region_channels out of range")
        if not 1 <= self.color_region_channels <= 3 * self.hop_patch**2:
            raise InvalidInputError("color_region_channels out of range")
        if self.region_keep < 1:
            raise InvalidInputError("region_keep must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        d = dict(self.__dict__)
        d["region"] = list(self.region)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "FeatureConfig":
        d = dict(d)
        d["region"] = tuple(d["region"])
        return cls(**d)


@dataclass
class TransformState:
    """All fitted transforms needed to featurize a crop."""

    config: FeatureConfig
    spatial_hop1: SaabKernelSet
    spatial_hop2: SaabKernelSet
    color_hop1: SaabKernelSet
    color_hop2: SaabKernelSet
    dct_region: PcaBasis
    hop1_region: PcaBasis
    color_region: PcaBasis


@dataclass(frozen=True)
class FeatureLayout:
    """Named contiguous segments of the fused crop vector."""

    segments: tuple[tuple[str, int], ...]

    @property
    def total(self) -> int:
        return sum(n for _, n in self.segments)

    def slice_of(self, name: str) -> slice:
        off = 0
        for seg, n in self.segments:
            if seg == name:
                return slice(off, off + n)
            off += n
        raise InvalidInputError(f"unknown segment {name!r}")


def spatial_length(config: FeatureConfig) -> int:
    g = config.crop_size // config.dct_block          # DCT grid (32)
    p = g // 2                                        # pooled grid (16)
    h1 = g // config.hop_patch                        # hop1 grid (8)
    p1 = h1 // 2                                      # pooled hop1 grid (4)
    h2 = h1 // config.hop_patch                       # hop2 grid (2)
    rh, rw = config.region
    n_dct_regions = (p // rh) * (p // rw)
    n_h1_regions = max(1, (p1 // rh) * (p1 // rw))
    d = config.dct_block**2 - 1
    d += config.dct_region_channels * n_dct_regions * config.region_keep
    d += config.hop_patch**2 - 1
    d += config.hop1_region_channels * n_h1_regions * config.region_keep
    d += config.hop_patch**2 * h2 * h2
    return d


def spatiocolor_length(config: FeatureConfig) -> int:
    g = config.crop_size // config.hop_patch          # cuboid grid (64)
    p = g // 2                                        # pooled grid (32)
    rh, rw = config.region
    n_regions = (p // rh) * (p // rw)
    d = 3 * config.hop_patch**2 - 1
    d += config.color_region_channels * n_regions * config.region_keep
    d += config.hop_patch**2 - 1
    return d


def layer_descriptor_length(config: FeatureConfig, grid: int) -> int:
    return 17 * grid * grid


def fused_layout(config: FeatureConfig) -> FeatureLayout:
    return FeatureLayout(
        segments=(
            ("spatial", spatial_length(config)),
            ("spatiocolor", spatiocolor_length(config)),
            ("saliency_d4", layer_descriptor_length(config, config.d4_grid)),
            ("saliency_d8", layer_descriptor_length(config, config.d8_grid)),
        )
    )


# ---------------------------------------------------------------------------
# Batched primitive helpers (leading axes arbitrary)
# ---------------------------------------------------------------------------

def _tile_vectors(planes: np.ndarray, t: int) -> np.ndarray:
    """Non-overlapping t x t tiles of (N, H, W) planes -> (N * nh * nw, t * t)."""
    n, h, w = planes.shape
    tiles = planes.reshape(n, h // t, t, w // t, t).transpose(0, 1, 3, 2, 4)
    return np.ascontiguousarray(tiles.reshape(-1, t * t))


def _cuboid_vectors(stacks: np.ndarray, t: int) -> np.ndarray:
    """Non-overlapping t x t x C cuboids of (N, C, H, W) -> (N * nh * nw, C * t * t).

    The vector layout is (channel, row, col), matching ``extract_patches``.
    """
    n, c, h, w = stacks.shape
    tiles = stacks.reshape(n, c, h // t, t, w // t, t).transpose(0, 2, 4, 1, 3, 5)
    return np.ascontiguousarray(tiles.reshape(-1, c * t * t))


def _pool2(x: np.ndarray) -> np.ndarray:
    """2x2/stride-2 max pool over the trailing two axes (must be even)."""
    h, w = x.shape[-2], x.shape[-1]
    return x.reshape(*x.shape[:-2], h // 2, 2, w // 2, 2).max(axis=(-3, -1))


def _saab_tiles(kernels: SaabKernelSet, vectors: np.ndarray, grid: tuple[int, ...]) -> np.ndarray:
    """Project tile vectors and fold back to (N, D, *grid)."""
    proj = vectors.astype(np.float64) @ kernels.matrix().astype(np.float64).T
    d = kernels.dim
    out = proj.reshape(*grid, d).astype(np.float32)
    return np.moveaxis(out, -1, 1) if len(grid) > 1 else out


def _channel_std(maps: np.ndarray) -> np.ndarray:
    """Population std over the trailing two axes: (N, C, H, W) -> (N, C)."""
    n, c = maps.shape[0], maps.shape[1]
    flat = maps.reshape(n, c, -1).astype(np.float64)
    return flat.std(axis=2)


def _region_coeffs(maps: np.ndarray, region: tuple[int, int], basis: PcaBasis, keep: int) -> np.ndarray:
    """Leading PCA coefficients of non-overlapping regions.

    maps: (N, C, H, W) -> (N, C * n_regions * keep), ordered channel, region
    (row-major), component.
    """
    n, c, h, w = maps.shape
    rh, rw = region
    vecs = maps.reshape(n, c, h // rh, rh, w // rw, rw).transpose(0, 1, 2, 4, 3, 5)
    vecs = vecs.reshape(-1, rh * rw).astype(np.float64)
    proj = (vecs - basis.mean.astype(np.float64)) @ basis.components.astype(np.float64).T
    proj = proj[:, :keep].astype(np.float32)
    return proj.reshape(n, -1)


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

def _cap(vectors: np.ndarray, cap: int, rng: np.random.Generator) -> np.ndarray:
    if vectors.shape[0] <= cap:
        return vectors
    idx = np.sort(rng.choice(vectors.shape[0], size=cap, replace=False))
    return vectors[idx]


def fit_transform_state(
    yuv_crops: np.ndarray, config: FeatureConfig, rng: np.random.Generator
) -> TransformState:
    """Fit every Saab hop and region basis from a sample of training crops.

    Args:
        yuv_crops: (n, 3, size, size) float32 YUV crop stack.
        config: geometry of the cascades.
        rng: used only to cap oversized sample matrices.
    """
    config.validate()
    x = np.asarray(yuv_crops, dtype=np.float32)
    if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != x.shape[3] or x.shape[2] != config.crop_size:
        raise InvalidInputError(
            f"expected (n, 3, {config.crop_size}, {config.crop_size}) crops, got {x.shape}"
        )
    if x.shape[0] < 4:
        raise InsufficientDataError("need at least 4 crops to fit the transforms")
    t = config.hop_patch
    cap = config.max_fit_vectors

    ys = x[:, 0]
    dct = block_dct_batch(ys, config.dct_block)               # (n, 64, 32, 32)
    n, _, g, _ = dct.shape

    sp1_vec = _tile_vectors(dct[:, 0], t)
    spatial_hop1 = saab_fit(_cap(sp1_vec, cap, rng), (1, t, t))
    hop1 = _saab_tiles(spatial_hop1, sp1_vec, (n, g // t, g // t))

    sp2_vec = _tile_vectors(hop1[:, 0], t)
    spatial_hop2 = saab_fit(_cap(sp2_vec, cap, rng), (1, t, t))

    pooled_dct = _pool2(dct)
    dct_region = pca_fit(
        _cap(_region_vectors(pooled_dct[:, : config.dct_region_channels], config.region), cap, rng),
        keep=config.region_keep,
    )
    pooled_h1 = _pool2(hop1)
    hop1_region = pca_fit(
        _cap(_region_vectors(pooled_h1[:, : config.hop1_region_channels], config.region), cap, rng),
        keep=config.region_keep,
    )

    c1_vec = _cuboid_vectors(x, t)
    color_hop1 = saab_fit(_cap(c1_vec, cap, rng), (3, t, t))
    gc = config.crop_size // t
    chop1 = _saab_tiles(color_hop1, c1_vec, (n, gc, gc))      # (n, 48, 64, 64)

    c2_vec = _tile_vectors(chop1[:, 0], t)
    color_hop2 = saab_fit(_cap(c2_vec, cap, rng), (1, t, t))

    pooled_c = _pool2(chop1)
    color_region = pca_fit(
        _cap(_region_vectors(pooled_c[:, : config.color_region_channels], config.region), cap, rng),
        keep=config.region_keep,
    )
    return TransformState(
        config=config,
        spatial_hop1=spatial_hop1,
        spatial_hop2=spatial_hop2,
        color_hop1=color_hop1,
        color_hop2=color_hop2,
        dct_region=dct_region,
        hop1_region=hop1_region,
        color_region=color_region,
    )


def _region_vectors(maps: np.ndarray, region: tuple[int, int]) -> np.ndarray:
    n, c, h, w = maps.shape
    rh, rw = region
    vecs = maps.reshape(n, c, h // rh, rh, w // rw, rw).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(vecs.reshape(-1, rh * rw))


# ---------------------------------------------------------------------------
# Extraction
# ---------------------------------------------------------------------------

def extract_spatial_batch(ys: np.ndarray, state: TransformState) -> np.ndarray:
    """Luminance-path features for a stack of (n, size, size) Y planes."""
    cfg = state.config
    y = np.asarray(ys, dtype=np.float32)
    if y.ndim != 3 or y.shape[1] != cfg.crop_size or y.shape[2] != cfg.crop_size:
        raise InvalidInputError(
            f"expected (n, {cfg.crop_size}, {cfg.crop_size}) planes, got {y.shape}"
        )
    t = cfg.hop_patch
    dct = block_dct_batch(y, cfg.dct_block)
    n, _, g, _ = dct.shape
    pooled = _pool2(dct)

    parts = [
        _channel_std(pooled[:, 1:]),
        _region_coeffs(pooled[:, : cfg.dct_region_channels], cfg.region, state.dct_region, cfg.region_keep),
    ]
    hop1 = _saab_tiles(state.spatial_hop1, _tile_vectors(dct[:, 0], t), (n, g // t, g // t))
    parts.append(_channel_std(hop1[:, 1:]))
    pooled_h1 = _pool2(hop1)
    parts.append(
        _region_coeffs(pooled_h1[:, : cfg.hop1_region_channels], cfg.region, state.hop1_region, cfg.region_keep)
    )
    h1g = hop1.shape[2]
    hop2 = _saab_tiles(state.spatial_hop2, _tile_vectors(hop1[:, 0], t), (n, h1g // t, h1g // t))
    parts.append(hop2.reshape(n, -1))
    return np.concatenate([np.asarray(p, dtype=np.float32) for p in parts], axis=1)


def extract_spatiocolor_batch(yuv: np.ndarray, state: TransformState) -> np.ndarray:
    """Color-path features for a stack of (n, 3, size, size) YUV crops."""
    cfg = state.config
    x = np.asarray(yuv, dtype=np.float32)
    if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != cfg.crop_size or x.shape[3] != cfg.crop_size:
        raise InvalidInputError(
            f"expected (n, 3, {cfg.crop_size}, {cfg.crop_size}) crops, got {x.shape}"
        )
    t = cfg.hop_patch
    gc = cfg.crop_size // t
    chop1 = _saab_tiles(state.color_hop1, _cuboid_vectors(x, t), (x.shape[0], gc, gc))
    pooled = _pool2(chop1)
    parts = [
        _channel_std(chop1[:, 1:]),
        _region_coeffs(pooled[:, : cfg.color_region_channels], cfg.region, state.color_region, cfg.region_keep),
    ]
    hop2 = _saab_tiles(state.color_hop2, _tile_vectors(chop1[:, 0], t), (x.shape[0], gc // t, gc // t))
    parts.append(_channel_std(hop2[:, 1:]))
    return np.concatenate([np.asarray(p, dtype=np.float32) for p in parts], axis=1)


def _require_crop(crop: RasterImage, size: int) -> RasterImage:
    if crop.height != size or crop.width != size:
        raise InvalidInputError(
            f"expected a {size}x{size} crop, got {crop.height}x{crop.width}"
        )
    if crop.channels != 3:
        raise InvalidInputError("expected a 3-channel crop")
    return convert_colorspace(crop, YUV)


def extract_spatial(crop: RasterImage, state: TransformState) -> np.ndarray:
    """Luminance-path feature vector of one crop (any 3-channel colorspace)."""
    yuv = _require_crop(crop, state.config.crop_size)
    return extract_spatial_batch(yuv.samples[None, :, :, 0], state)[0]


def extract_spatiocolor(crop: RasterImage, state: TransformState) -> np.ndarray:
    """Color-path feature vector of one crop."""
    yuv = _require_crop(crop, state.config.crop_size)
    return extract_spatiocolor_batch(yuv.samples.transpose(2, 0, 1)[None], state)[0]


def crop_layer_descriptor(
    tensor: np.ndarray, scale: int, window, out_grid: int
) -> np.ndarray:
    """Pool a saliency-layer tensor over a crop window into a fixed grid.

    ``tensor`` lives at 1/(2 * scale) of original resolution; the window is in
    original pixel coordinates.
    """
    factor = 2 * scale
    c, th, tw = tensor.shape
    r0 = min(window.row // factor, th - 1)
    c0 = min(window.col // factor, tw - 1)
    r1 = max(r0 + 1, min(-(-(window.row + window.size) // factor), th))
    c1 = max(c0 + 1, min(-(-(window.col + window.size) // factor), tw))
    sliced = np.ascontiguousarray(tensor[:, r0:r1, c0:c1])
    return _resize_tensor(sliced, (out_grid, out_grid)).reshape(-1)


def global_layer_descriptor(layers: LayerFeatures, grid: int) -> np.ndarray:
    """Whole-image descriptor from the coarsest saliency layer."""
    return _resize_tensor(layers.tensors[16], (grid, grid)).reshape(-1)


def fuse_features(
    spatial: np.ndarray,
    spatiocolor: np.ndarray,
    d4_descriptor: np.ndarray,
    d8_descriptor: np.ndarray,
) -> np.ndarray:
    """Concatenate the per-crop segments in layout order."""
    parts = [np.asarray(p, dtype=np.float32).reshape(-1) for p in (spatial, spatiocolor, d4_descriptor, d8_descriptor)]
    return np.concatenate(parts)


def extract_fused_batch(
    img: RasterImage,
    windows: Sequence,
    state: TransformState,
    layers: LayerFeatures,
) -> np.ndarray:
    """Fused feature matrix (k, layout.total) for all crop windows of one image."""
    cfg = state.config
    yuv = convert_colorspace(img, YUV)
    size = cfg.crop_size
    stack = np.empty((len(windows), 3, size, size), dtype=np.float32)
    for i, w in enumerate(windows):
        if w.row < 0 or w.col < 0 or w.row + size > img.height or w.col + size > img.width:
            raise InvalidInputError("crop window exceeds image bounds")
        stack[i] = yuv.samples[w.row : w.row + size, w.col : w.col + size].transpose(2, 0, 1)
    sp = extract_spatial_batch(stack[:, 0], state)
    sc = extract_spatiocolor_batch(stack, state)
    d4 = np.stack([crop_layer_descriptor(layers.tensors[4], 4, w, cfg.d4_grid) for w in windows])
    d8 = np.stack([crop_layer_descriptor(layers.tensors[8], 8, w, cfg.d8_grid) for w in windows])
    return np.concatenate([sp, sc, d4, d8], axis=1)


# ---------------------------------------------------------------------------
# Serialization helpers
# ---------------------------------------------------------------------------

def _saab_arrays(prefix: str, hop: SaabKernelSet) -> dict[str, np.ndarray]:
    return {
        f"{prefix}_shape": np.array(hop.patch_shape, dtype=np.uint32),
        f"{prefix}_dc": hop.dc_kernel,
        f"{prefix}_ac": hop.ac_kernels,
        f"{prefix}_energy": hop.energies,
    }


def _saab_from(prefix: str, arrays: dict[str, np.ndarray]) -> SaabKernelSet:
    return SaabKernelSet(
        patch_shape=tuple(int(v) for v in arrays[f"{prefix}_shape"]),
        dc_kernel=arrays[f"{prefix}_dc"],
        ac_kernels=arrays[f"{prefix}_ac"],
        energies=arrays[f"{prefix}_energy"],
    )


def _pca_arrays(prefix: str, basis: PcaBasis) -> dict[str, np.ndarray]:
    return {
        f"{prefix}_mean": basis.mean,
        f"{prefix}_components": basis.components,
        f"{prefix}_variances": basis.variances,
    }


def _pca_from(prefix: str, arrays: dict[str, np.ndarray]) -> PcaBasis:
    return PcaBasis(
        mean=arrays[f"{prefix}_mean"],
        components=arrays[f"{prefix}_components"],
        variances=arrays[f"{prefix}_variances"],
    )


def state_to_arrays(state: TransformState) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    arrays.update(_saab_arrays("sp_hop1", state.spatial_hop1))
    arrays.update(_saab_arrays("sp_hop2", state.spatial_hop2))
    arrays.update(_saab_arrays("co_hop1", state.color_hop1))
    arrays.update(_saab_arrays("co_hop2", state.color_hop2))
    arrays.update(_pca_arrays("dct_region", state.dct_region))
    arrays.update(_pca_arrays("hop1_region", state.hop1_region))
    arrays.update(_pca_arrays("color_region", state.color_region))
    return arrays


def state_from_arrays(config: FeatureConfig, arrays: dict[str, np.ndarray]) -> TransformState:
    return TransformState(
        config=config,
        spatial_hop1=_saab_from("sp_hop1", arrays),
        spatial_hop2=_saab_from("sp_hop2", arrays),
        color_hop1=_saab_from("co_hop1", arrays),
        color_hop2=_saab_from("co_hop2", arrays),
        dct_region=_pca_from("dct_region", arrays),
        hop1_region=_pca_from("hop1_region", arrays),
        color_region=_pca_from("color_region", arrays),
    )
