"""Data-driven orthonormal transforms: block DCT, PCA, Saab, pooling, region PCA.

Channel tensors are float32 arrays of shape (channels, height, width).  Fitted
bases are quantized to float32 at fit time so that applying a freshly fitted
transform and applying a reloaded one produce bit-identical outputs; the
internal linear algebra runs in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InsufficientDataError, InvalidInputError
from .imageio import pad_edge


def _as_tensor(x: np.ndarray) -> np.ndarray:
    a = np.asarray(x, dtype=np.float32)
    if a.ndim == 2:
        a = a[None, :, :]
    if a.ndim != 3:
        raise InvalidInputError(f"expected a (C, H, W) tensor, got shape {a.shape}")
    return a


def _fix_signs(components: np.ndarray) -> np.ndarray:
    """Flip each row so its largest-magnitude entry is positive (first on ties)."""
    out = components.copy()
    for i in range(out.shape[0]):
        row = out[i]
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            out[i] = -row
    return out


# ---------------------------------------------------------------------------
# Block DCT
# ---------------------------------------------------------------------------

def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal type-II DCT matrix of size n x n (float64)."""
    k = np.arange(n, dtype=np.float64)
    basis = np.cos(np.pi * (2.0 * k[None, :] + 1.0) * k[:, None] / (2.0 * n))
    basis[0] *= np.sqrt(1.0 / n)
    basis[1:] *= np.sqrt(2.0 / n)
    return basis


def zigzag_order(n: int = 8) -> np.ndarray:
    """Flat indices of the n x n zigzag scan, starting at DC then (0,1), (1,0), ..."""
    coords = sorted(
        ((i, j) for i in range(n) for j in range(n)),
        key=lambda ij: (ij[0] + ij[1], ij[0] if (ij[0] + ij[1]) % 2 else ij[1]),
    )
    return np.array([i * n + j for i, j in coords], dtype=np.int64)


def block_dct_batch(planes: np.ndarray, block: int = 8) -> np.ndarray:
    """Blockwise orthonormal DCT of a stack of planes.

    Args:
        planes: (N, H, W) float array; edges are replicated to a multiple of
            ``block``.
        block: side length of the square blocks.

    Returns:
        (N, block*block, H/block, W/block) float32 tensor whose channel axis is
        in zigzag order (channel 0 is the DC coefficient of each block).
    """
    p = np.asarray(planes, dtype=np.float64)
    if p.ndim != 3:
        raise InvalidInputError(f"expected (N, H, W), got shape {p.shape}")
    p = pad_edge(p, block, block)
    n, h, w = p.shape
    bh, bw = h // block, w // block
    cells = p.reshape(n, bh, block, bw, block)
    mat = dct_matrix(block)
    coeff = np.einsum("ij,najbk,lk->nabil", mat, cells, mat, optimize=True)
    coeff = coeff.reshape(n, bh, bw, block * block)[..., zigzag_order(block)]
    return coeff.transpose(0, 3, 1, 2).astype(np.float32)


def block_dct(plane: np.ndarray, block: int = 8) -> np.ndarray:
    """Single-plane convenience wrapper around :func:`block_dct_batch`."""
    t = _as_tensor(plane)
    if t.shape[0] != 1:
        raise InvalidInputError("block_dct expects a single plane")
    return block_dct_batch(t, block)[0]


def block_idct(coeffs: np.ndarray, block: int = 8) -> np.ndarray:
    """Invert :func:`block_dct`: (block*block, h, w) zigzag channels -> plane."""
    c = np.asarray(coeffs, dtype=np.float64)
    if c.ndim != 3 or c.shape[0] != block * block:
        raise InvalidInputError(f"expected ({block * block}, h, w), got {c.shape}")
    inv_order = np.argsort(zigzag_order(block))
    cells = c[inv_order].transpose(1, 2, 0).reshape(c.shape[1], c.shape[2], block, block)
    mat = dct_matrix(block)
    blocks = np.einsum("ji,abjk,kl->abil", mat, cells, mat, optimize=True)
    h, w = c.shape[1] * block, c.shape[2] * block
    return blocks.transpose(0, 2, 1, 3).reshape(h, w).astype(np.float32)


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------

@dataclass
class PcaBasis:
    """Principal directions (rows of ``components``) with mean and variances."""

    mean: np.ndarray        # (D,) float32
    components: np.ndarray  # (K, D) float32, orthonormal rows
    variances: np.ndarray   # (K,) float32, descending

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])

    @property
    def keep(self) -> int:
        return int(self.components.shape[0])


def pca_fit(samples: np.ndarray, keep: int | None = None) -> PcaBasis:
    """Fit a PCA basis on (N, D) samples via the eigendecomposition of the
    population covariance.  Requires N >= 2; components are sign-normalized so
    the largest-magnitude entry of each is positive.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidInputError(f"expected (N, D) samples, got shape {x.shape}")
    n, d = x.shape
    if n < 2:
        raise InsufficientDataError(f"need at least 2 samples to fit PCA, got {n}")
    if keep is None:
        keep = d
    if not 1 <= keep <= d:
        raise InvalidInputError(f"keep={keep} out of range for dimension {d}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / n
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals, kind="stable")[::-1][:keep]
    components = _fix_signs(eigvecs[:, order].T)
    variances = np.clip(eigvals[order], 0.0, None)
    return PcaBasis(
        mean=mean.astype(np.float32),
        components=components.astype(np.float32),
        variances=variances.astype(np.float32),
    )


def pca_project(basis: PcaBasis, samples: np.ndarray) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != basis.dim:
        raise InvalidInputError(
            f"expected (N, {basis.dim}) samples, got shape {x.shape}"
        )
    out = (x - basis.mean.astype(np.float64)) @ basis.components.astype(np.float64).T
    return out.astype(np.float32)


# ---------------------------------------------------------------------------
# Saab
# ---------------------------------------------------------------------------

@dataclass
class SaabKernelSet:
    """Orthonormal Saab kernels for one hop.

    ``patch_shape`` is (channels, height, width).  ``dc_kernel`` is the constant
    vector 1/sqrt(D); ``ac_kernels`` are the PCA directions of the DC-removed
    residuals, rows orthonormal to the DC kernel and to each other.
    """

    patch_shape: tuple[int, int, int]
    dc_kernel: np.ndarray   # (D,) float32
    ac_kernels: np.ndarray  # (D-1, D) float32
    energies: np.ndarray    # (D-1,) float32, descending

    @property
    def dim(self) -> int:
        return int(self.dc_kernel.shape[0])

    def matrix(self) -> np.ndarray:
        """All kernels stacked as rows: row 0 is DC, rows 1..D-1 are AC."""
        return np.vstack([self.dc_kernel[None, :], self.ac_kernels])


def _dc_complement_basis(d: int) -> np.ndarray:
    """A (D, D-1) orthonormal basis of the subspace orthogonal to the constant vector."""
    dc = np.full((d, 1), 1.0 / np.sqrt(d), dtype=np.float64)
    seed = np.concatenate([dc, np.eye(d)[:, : d - 1]], axis=1)
    q, _ = np.linalg.qr(seed)
    return q[:, 1:]


def saab_fit(patches: np.ndarray, patch_shape: tuple[int, int, int]) -> SaabKernelSet:
    """Fit Saab kernels on flattened patches.

    Args:
        patches: (N, D) array of patch vectors, D = prod(patch_shape), with the
            (channel, row, col) axes flattened in C order.
        patch_shape: source patch geometry, used to validate inputs at apply time.

    The DC kernel is fixed to the constant unit vector; AC kernels are the
    eigenvectors of the covariance of the patches restricted to the complement
    of the DC direction, ordered by descending eigenvalue ("energy").
    """
    x = np.asarray(patches, dtype=np.float64)
    d = int(np.prod(patch_shape))
    if x.ndim != 2 or x.shape[1] != d:
        raise InvalidInputError(
            f"expected (N, {d}) patches for shape {patch_shape}, got {x.shape}"
        )
    if x.shape[0] < d:
        raise InsufficientDataError(
            f"need at least {d} patches to fit Saab kernels, got {x.shape[0]}"
        )
    basis = _dc_complement_basis(d)
    # Remove the per-patch mean; what is left lives in the complement subspace.
    residual = x - x.mean(axis=1, keepdims=True)
    reduced = residual @ basis
    cov = reduced.T @ reduced / reduced.shape[0]
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals, kind="stable")[::-1]
    ac = _fix_signs((basis @ eigvecs[:, order]).T)
    energies = np.clip(eigvals[order], 0.0, None)
    dc = np.full(d, 1.0 / np.sqrt(d), dtype=np.float64)
    return SaabKernelSet(
        patch_shape=tuple(patch_shape),
        dc_kernel=dc.astype(np.float32),
        ac_kernels=ac.astype(np.float32),
        energies=energies.astype(np.float32),
    )


def extract_patches(tensor: np.ndarray, patch_shape: tuple[int, int, int], stride: int) -> tuple[np.ndarray, tuple[int, int]]:
    """Slide a (c, ph, pw) window over a (C, H, W) tensor.

    The tensor is edge-replicated so every stride step yields a full window.
    Returns (patch matrix of shape (n_h * n_w, c*ph*pw), (n_h, n_w)); patch
    vectors flatten the (channel, row, col) axes in C order.
    """
    t = _as_tensor(tensor)
    c, ph, pw = patch_shape
    if t.shape[0] != c:
        raise InvalidInputError(
            f"tensor has {t.shape[0]} channels, kernels expect {c}"
        )
    if stride < 1:
        raise InvalidInputError("stride must be >= 1")
    h, w = t.shape[1], t.shape[2]
    # Pad so that (H' - ph) and (W' - pw) are multiples of the stride and the
    # window fits at least once.
    th = max(ph, h + ((-(h - ph)) % stride if h > ph else ph - h))
    tw = max(pw, w + ((-(w - pw)) % stride if w > pw else pw - w))
    padded = np.pad(t, ((0, 0), (0, th - h), (0, tw - w)), mode="edge")
    windows = sliding_window_view(padded, (ph, pw), axis=(1, 2))[:, ::stride, ::stride]
    n_h, n_w = windows.shape[1], windows.shape[2]
    patches = windows.transpose(1, 2, 0, 3, 4).reshape(n_h * n_w, c * ph * pw)
    return np.ascontiguousarray(patches), (n_h, n_w)


def saab_apply(kernels: SaabKernelSet, tensor: np.ndarray, stride: int) -> np.ndarray:
    """Project sliding windows of ``tensor`` onto the Saab kernels.

    Returns a (D, n_h, n_w) float32 tensor; channel 0 is the DC response.
    The projection runs in float64 for reproducible, quantization-limited
    accuracy, then rounds once to float32.
    """
    patches, (n_h, n_w) = extract_patches(tensor, kernels.patch_shape, stride)
    proj = patches.astype(np.float64) @ kernels.matrix().astype(np.float64).T
    return proj.T.reshape(kernels.dim, n_h, n_w).astype(np.float32)


def saab_reconstruct(kernels: SaabKernelSet, responses: np.ndarray) -> np.ndarray:
    """Invert the projection of non-overlapping patches: (N, D) responses -> (N, D)."""
    r = np.asarray(responses, dtype=np.float64)
    if r.ndim != 2 or r.shape[1] != kernels.dim:
        raise InvalidInputError(f"expected (N, {kernels.dim}) responses, got {r.shape}")
    return (r @ kernels.matrix().astype(np.float64)).astype(np.float64)


# ---------------------------------------------------------------------------
# Pooling and per-channel statistics
# ---------------------------------------------------------------------------

def max_pool2(tensor: np.ndarray) -> np.ndarray:
    """2x2 max pooling with stride 2; odd edges are replicated first."""
    t = _as_tensor(tensor)
    p = pad_edge(t, 2, 2)
    c, h, w = p.shape
    cells = p.reshape(c, h // 2, 2, w // 2, 2)
    return cells.max(axis=(2, 4))


def channel_std(tensor: np.ndarray) -> np.ndarray:
    """Population standard deviation of each channel, as float32."""
    t = _as_tensor(tensor)
    return t.reshape(t.shape[0], -1).astype(np.float64).std(axis=1).astype(np.float32)


# ---------------------------------------------------------------------------
# Region PCA
# ---------------------------------------------------------------------------

def region_vectors(tensor: np.ndarray, region: tuple[int, int]) -> np.ndarray:
    """Tile each channel into non-overlapping regions and flatten them.

    Returns (C * n_regions, rh * rw) with channel-major, row-major region order.
    Edges are replicated when the spatial dims are not multiples of the region.
    """
    t = _as_tensor(tensor)
    rh, rw = region
    p = pad_edge(t, rh, rw)
    c, h, w = p.shape
    cells = p.reshape(c, h // rh, rh, w // rw, rw).transpose(0, 1, 3, 2, 4)
    return np.ascontiguousarray(cells.reshape(-1, rh * rw))


def region_pca_fit(vectors: np.ndarray, keep: int) -> PcaBasis:
    """Fit the shared region basis from stacked region vectors."""
    return pca_fit(vectors, keep=keep)


def region_pca_reduce(
    tensor: np.ndarray, region: tuple[int, int], basis: PcaBasis, keep: int | None = None
) -> np.ndarray:
    """Describe each channel by the leading PCA coefficients of its regions.

    Output is a flat float32 vector of length C * n_regions * keep, ordered by
    channel, then region (row-major), then component.
    """
    if keep is None:
        keep = basis.keep
    if not 1 <= keep <= basis.keep:
        raise InvalidInputError(f"keep={keep} exceeds basis components {basis.keep}")
    vecs = region_vectors(tensor, region)
    proj = pca_project(basis, vecs)[:, :keep]
    return np.ascontiguousarray(proj.reshape(-1))
