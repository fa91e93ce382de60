"""Supervised relevance ranking of feature dimensions.

Each dimension is scored by the best achievable weighted mean-squared error of
a single binary split of the targets, searching candidate thresholds on a
uniform grid over the dimension's range.  Lower loss means more relevant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError, InvalidInputError

_CHUNK = 256  # feature columns histogrammed per pass; bounds the bin workspace


@dataclass
class RftSelection:
    """Relevance ranking: ``ranked`` holds feature indices, best first."""

    ranked: np.ndarray  # (D,) uint32, ascending split loss
    losses: np.ndarray  # (D,) float32, loss of ranked[i]
    bins: int

    @property
    def dim(self) -> int:
        return int(self.ranked.shape[0])

    def head(self, keep: int) -> np.ndarray:
        if not 1 <= keep <= self.dim:
            raise InvalidInputError(f"keep={keep} out of range 1..{self.dim}")
        return self.ranked[:keep]


def _split_losses(columns: np.ndarray, targets: np.ndarray, bins: int) -> np.ndarray:
    """Minimum split loss for each column of (N, C) ``columns`` (float64)."""
    n, c = columns.shape
    lo = columns.min(axis=0)
    hi = columns.max(axis=0)
    span = hi - lo
    scale = np.where(span > 0, bins / np.where(span > 0, span, 1.0), 0.0)
    idx = np.floor((columns - lo) * scale).astype(np.int64)
    np.clip(idx, 0, bins - 1, out=idx)
    idx += np.arange(c, dtype=np.int64) * bins

    flat = idx.reshape(-1)
    reps = np.broadcast_to(targets[:, None], (n, c)).reshape(-1)
    minlength = c * bins
    counts = np.bincount(flat, minlength=minlength).reshape(c, bins)
    sums = np.bincount(flat, weights=reps, minlength=minlength).reshape(c, bins)
    sumsq = np.bincount(flat, weights=reps * reps, minlength=minlength).reshape(c, bins)

    # Prefix stats over the bin axis give the left side of each candidate split.
    c_left = counts.cumsum(axis=1)[:, :-1]
    s_left = sums.cumsum(axis=1)[:, :-1]
    q_left = sumsq.cumsum(axis=1)[:, :-1]
    c_right = n - c_left
    s_right = sums.sum(axis=1, keepdims=True) - s_left
    q_right = sumsq.sum(axis=1, keepdims=True) - q_left

    with np.errstate(divide="ignore", invalid="ignore"):
        sse_left = q_left - np.where(c_left > 0, s_left * s_left / np.maximum(c_left, 1), 0.0)
        sse_right = q_right - np.where(c_right > 0, s_right * s_right / np.maximum(c_right, 1), 0.0)
    total = np.clip(sse_left, 0.0, None) + np.clip(sse_right, 0.0, None)
    return total.min(axis=1) / n


def rft_rank(features: np.ndarray, targets: np.ndarray, bins: int = 16) -> RftSelection:
    """Rank every feature dimension by its best binary-split loss.

    Args:
        features: (N, D) array.
        targets: (N,) array of regression targets.
        bins: number of uniform cells over each dimension's range; candidate
            thresholds are the bins - 1 interior cell edges.

    Ties in loss keep the lower feature index first.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidInputError(f"expected (N, D) features, got shape {x.shape}")
    if y.shape != (x.shape[0],):
        raise InvalidInputError(
            f"targets shape {y.shape} does not match {x.shape[0]} samples"
        )
    if x.shape[0] < 2:
        raise InsufficientDataError("need at least 2 samples to rank features")
    if bins < 2:
        raise InvalidInputError("bins must be >= 2")

    d = x.shape[1]
    losses = np.empty(d, dtype=np.float64)
    for start in range(0, d, _CHUNK):
        stop = min(start + _CHUNK, d)
        losses[start:stop] = _split_losses(np.ascontiguousarray(x[:, start:stop]), y, bins)
    ranked = np.argsort(losses, kind="stable")
    return RftSelection(
        ranked=ranked.astype(np.uint32),
        losses=losses[ranked].astype(np.float32),
        bins=bins,
    )


def rft_apply(selection: RftSelection, features: np.ndarray, keep: int) -> np.ndarray:
    """Gather the ``keep`` most relevant columns, in ranking order."""
    x = np.asarray(features)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != selection.dim:
        raise InvalidInputError(
            f"features have {x.shape[1]} dims, selection was fitted on {selection.dim}"
        )
    cols = selection.head(keep)
    return np.ascontiguousarray(x[:, cols])
