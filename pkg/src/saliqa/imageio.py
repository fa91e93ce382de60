"""Image decoding, color conversion, multi-scale resampling and crop enumeration.

All pixel data is carried as float32 arrays in the native 0..255 range.  Color
conversion uses the full-range BT.601 matrix so that ``Y = 0.299 R + 0.587 G +
0.114 B`` and the chroma planes are centered at 128.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

from .errors import InvalidInputError

RGB = "rgb"
YUV = "yuv"
GRAY = "gray"

_COLORSPACES = (RGB, YUV, GRAY)

# Full-range BT.601 forward matrix (rows produce Y, U, V from R, G, B).
_RGB_TO_YUV = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ],
    dtype=np.float64,
)
_YUV_OFFSET = np.array([0.0, 128.0, 128.0], dtype=np.float64)

# Standard truncated inverse; round-trips 8-bit RGB to within half a code value.
_YUV_TO_RGB = np.array(
    [
        [1.0, 0.0, 1.402],
        [1.0, -0.344136, -0.714136],
        [1.0, 1.772, 0.0],
    ],
    dtype=np.float64,
)


@dataclass(frozen=True)
class RasterImage:
    """A decoded image: ``samples`` has shape (height, width, channels), float32."""

    height: int
    width: int
    channels: int
    colorspace: str
    samples: np.ndarray

    def __post_init__(self):
        if self.colorspace not in _COLORSPACES:
            raise InvalidInputError(f"unknown colorspace {self.colorspace!r}")
        if self.samples.shape != (self.height, self.width, self.channels):
            raise InvalidInputError(
                f"samples shape {self.samples.shape} does not match "
                f"({self.height}, {self.width}, {self.channels})"
            )
        if self.samples.dtype != np.float32:
            raise InvalidInputError("samples must be float32")


@dataclass(frozen=True)
class CropWindow:
    """Top-left corner and side length of a square crop, in pixels."""

    row: int
    col: int
    size: int


def from_array(arr: np.ndarray, colorspace: str = RGB) -> RasterImage:
    """Wrap an (H, W) or (H, W, C) array as a RasterImage, casting to float32."""
    a = np.asarray(arr)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3:
        raise InvalidInputError(f"expected 2-D or 3-D array, got shape {a.shape}")
    a = np.ascontiguousarray(a, dtype=np.float32)
    return RasterImage(a.shape[0], a.shape[1], a.shape[2], colorspace, a)


def load_image(path: str | Path) -> RasterImage:
    """Decode a PNG or JPEG file into an RGB RasterImage."""
    with Image.open(path) as im:
        rgb = im.convert("RGB")
        arr = np.asarray(rgb, dtype=np.float32)
    return RasterImage(arr.shape[0], arr.shape[1], 3, RGB, arr)


def save_image(path: str | Path, img: RasterImage) -> None:
    if img.colorspace == GRAY:
        arr = img.samples[:, :, 0]
    elif img.colorspace == RGB:
        arr = img.samples
    else:
        arr = convert_colorspace(img, RGB).samples
    data = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(path)


def load_gray_map(path: str | Path) -> np.ndarray:
    """Decode a grayscale image into a float32 (H, W) array scaled to [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float32)
    return arr / 255.0


def save_gray_map(path: str | Path, values: np.ndarray) -> None:
    data = np.clip(np.rint(np.asarray(values, dtype=np.float32) * 255.0), 0, 255)
    Image.fromarray(data.astype(np.uint8), mode="L").save(path)


def convert_colorspace(img: RasterImage, target: str) -> RasterImage:
    """Convert between RGB and YUV (BT.601 full range).  GRAY only converts to itself."""
    if target not in _COLORSPACES:
        raise InvalidInputError(f"unknown colorspace {target!r}")
    if img.colorspace == target:
        return img
    if img.colorspace == GRAY or target == GRAY:
        raise InvalidInputError("gray images cannot be converted")
    flat = img.samples.reshape(-1, 3).astype(np.float64)
    if target == YUV:
        out = flat @ _RGB_TO_YUV.T + _YUV_OFFSET
    else:
        out = (flat - _YUV_OFFSET) @ _YUV_TO_RGB.T
    out32 = out.reshape(img.samples.shape).astype(np.float32)
    return RasterImage(img.height, img.width, 3, target, out32)


def luminance(img: RasterImage) -> np.ndarray:
    """Return the (H, W) float32 luminance plane of any supported image."""
    if img.colorspace == GRAY:
        return img.samples[:, :, 0]
    if img.colorspace == YUV:
        return np.ascontiguousarray(img.samples[:, :, 0])
    flat = img.samples.reshape(-1, 3).astype(np.float64)
    y = flat @ _RGB_TO_YUV[0]
    return y.reshape(img.height, img.width).astype(np.float32)


def pad_edge(plane: np.ndarray, multiple_h: int, multiple_w: int) -> np.ndarray:
    """Edge-replicate a (..., H, W) array so the last two dims become multiples."""
    h, w = plane.shape[-2], plane.shape[-1]
    ph = (-h) % multiple_h
    pw = (-w) % multiple_w
    if ph == 0 and pw == 0:
        return plane
    pads = [(0, 0)] * (plane.ndim - 2) + [(0, ph), (0, pw)]
    return np.pad(plane, pads, mode="edge")


def block_mean(plane: np.ndarray, factor: int) -> np.ndarray:
    """Downsample a (H, W) plane by averaging factor x factor blocks.

    Edges are replicated when the dimensions are not multiples of the factor,
    so the output covers ceil(H / factor) x ceil(W / factor).
    """
    if factor < 1:
        raise InvalidInputError("factor must be >= 1")
    if factor == 1:
        return plane.astype(np.float32, copy=False)
    p = pad_edge(np.asarray(plane, dtype=np.float32), factor, factor)
    h, w = p.shape
    blocks = p.reshape(h // factor, factor, w // factor, factor)
    return blocks.mean(axis=(1, 3), dtype=np.float64).astype(np.float32)


def resize_plane(plane: np.ndarray, out_hw: tuple[int, int], mode: str = "bilinear") -> np.ndarray:
    """Resize a (H, W) or (H, W, C) float32 array.

    ``bilinear`` is used for upsampling; ``area`` averages source pixels and is
    the right choice when shrinking.
    """
    h, w = out_hw
    if h < 1 or w < 1:
        raise InvalidInputError("target size must be positive")
    interp = {"bilinear": cv2.INTER_LINEAR, "area": cv2.INTER_AREA}.get(mode)
    if interp is None:
        raise InvalidInputError(f"unknown resize mode {mode!r}")
    src = np.ascontiguousarray(plane, dtype=np.float32)
    if src.shape[:2] == (h, w):
        return src
    out = cv2.resize(src, (w, h), interpolation=interp)
    return out


def ensure_min_side(img: RasterImage, min_side: int) -> RasterImage:
    """Bilinearly upscale (preserving aspect ratio) until both sides reach min_side."""
    short = min(img.height, img.width)
    if short >= min_side:
        return img
    scale = min_side / short
    nh = max(min_side, int(np.ceil(img.height * scale)))
    nw = max(min_side, int(np.ceil(img.width * scale)))
    out = resize_plane(img.samples, (nh, nw), mode="bilinear")
    if out.ndim == 2:
        out = out[:, :, None]
    return RasterImage(nh, nw, img.channels, img.colorspace, out)


def crop_candidates(height: int, width: int, size: int, stride: int) -> list[CropWindow]:
    """Enumerate square crop windows on a regular grid.

    Offsets advance by ``stride`` in row-major order and the final offset on
    each axis is clamped so the window stays inside the image; duplicate
    windows produced by the clamping are dropped.
    """
    if size < 1 or stride < 1:
        raise InvalidInputError("size and stride must be positive")
    if height < size or width < size:
        raise InvalidInputError(
            f"image {height}x{width} is smaller than crop size {size}"
        )

    def axis_offsets(extent: int) -> list[int]:
        last = extent - size
        offs = list(range(0, last + 1, stride))
        if offs[-1] != last:
            offs.append(last)
        return offs

    rows = axis_offsets(height)
    cols = axis_offsets(width)
    return [CropWindow(r, c, size) for r in rows for c in cols]


def crop_image(img: RasterImage, window: CropWindow) -> RasterImage:
    r, c, s = window.row, window.col, window.size
    if r < 0 or c < 0 or r + s > img.height or c + s > img.width:
        raise InvalidInputError("crop window exceeds image bounds")
    view = np.ascontiguousarray(img.samples[r : r + s, c : c + s])
    return RasterImage(s, s, img.channels, img.colorspace, view)
