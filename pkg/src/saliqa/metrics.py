"""Correlation metrics for quality prediction: PLCC and SROCC."""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError, UndefinedMetricError


def _paired(a, b) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(a, dtype=np.float64).reshape(-1)
    y = np.asarray(b, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise InvalidInputError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[0] < 2:
        raise InvalidInputError("need at least 2 pairs")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise InvalidInputError("inputs must be finite")
    return x, y


def plcc(predictions, targets) -> float:
    """Pearson linear correlation coefficient.

    Raises UndefinedMetricError when either vector is constant (zero variance).
    """
    x, y = _paired(predictions, targets)
    xd = x - x.mean()
    yd = y - y.mean()
    sx = np.sqrt((xd * xd).sum())
    sy = np.sqrt((yd * yd).sum())
    if sx == 0.0 or sy == 0.0:
        raise UndefinedMetricError("correlation undefined for a constant vector")
    return float((xd * yd).sum() / (sx * sy))


def average_ranks(values) -> np.ndarray:
    """Ranks 1..L with ties assigned the average of their would-be ranks."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    order = np.argsort(v, kind="stable")
    sv = v[order]
    ranks = np.empty(v.shape[0], dtype=np.float64)
    i = 0
    while i < sv.shape[0]:
        j = i
        while j + 1 < sv.shape[0] and sv[j + 1] == sv[i]:
            j += 1
        # positions i..j share the same value; average rank is (i + j)/2 + 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def srocc(predictions, targets) -> float:
    """Spearman rank-order correlation: PLCC of the average ranks.

    For tie-free inputs this equals 1 - 6 * sum(d^2) / (L * (L^2 - 1)) where d
    is the per-item rank difference.
    """
    x, y = _paired(predictions, targets)
    rx = average_ranks(x)
    ry = average_ranks(y)
    if np.all(rx == rx[0]) or np.all(ry == ry[0]):
        raise UndefinedMetricError("rank correlation undefined for a constant vector")
    return plcc(rx, ry)
