"""Gradient-boosted regression trees with exact greedy split search.

Squared-error boosting: the model starts from the target mean and each round
fits one binary regression tree to the current residuals, scaled by the
shrinkage factor.  Split search is exact (all candidate thresholds between
consecutive distinct values), vectorized over a presorted feature-major layout
with a numba kernel.

Thresholds and leaf values are quantized to float32 during fitting and the
quantized values are used for the residual updates, so a fitted ensemble, its
serialized form, and a reloaded copy all predict bit-identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numba import njit

from .errors import InsufficientDataError, InvalidInputError

NODE_DTYPE = np.dtype(
    [
        ("feature", "<i4"),
        ("threshold", "<f4"),
        ("left", "<i4"),
        ("right", "<i4"),
        ("value", "<f4"),
    ]
)

_GAIN_EPS = 1e-12


@dataclass
class GbrtParams:
    rounds: int = 300
    max_depth: int = 4
    shrinkage: float = 0.1
    min_samples_leaf: int = 5
    subsample: float = 1.0
    colsample: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.rounds < 1:
            raise InvalidInputError("rounds must be >= 1")
        if self.max_depth < 0:
            raise InvalidInputError("max_depth must be >= 0")
        if not 0.0 < self.shrinkage <= 2.0:
            raise InvalidInputError("shrinkage must be in (0, 2]")
        if self.min_samples_leaf < 1:
            raise InvalidInputError("min_samples_leaf must be >= 1")
        if not 0.0 < self.subsample <= 1.0:
            raise InvalidInputError("subsample must be in (0, 1]")
        if not 0.0 < self.colsample <= 1.0:
            raise InvalidInputError("colsample must be in (0, 1]")

    def to_dict(self) -> dict[str, Any]:
        return {
            "rounds": self.rounds,
            "max_depth": self.max_depth,
            "shrinkage": self.shrinkage,
            "min_samples_leaf": self.min_samples_leaf,
            "subsample": self.subsample,
            "colsample": self.colsample,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "GbrtParams":
        return cls(**d)


@dataclass
class TreeEnsemble:
    """A fitted boosting ensemble.

    ``nodes`` concatenates all trees; ``tree_roots[t]`` indexes the root of
    tree t.  Leaf nodes carry feature == -1 and point left/right at themselves
    so prediction can walk a fixed number of levels without branching.
    """

    base_score: float
    shrinkage: float
    max_depth: int
    n_features: int
    nodes: np.ndarray
    tree_roots: np.ndarray
    # Diagnostics kept in memory only (not serialized):
    train_losses: np.ndarray | None = field(default=None, repr=False)
    residual_ranges: np.ndarray | None = field(default=None, repr=False)

    @property
    def tree_count(self) -> int:
        return int(self.tree_roots.shape[0])

    def tree_slice(self, t: int) -> np.ndarray:
        """The node records of tree ``t``."""
        start = int(self.tree_roots[t])
        stop = int(self.tree_roots[t + 1]) if t + 1 < self.tree_count else len(self.nodes)
        return self.nodes[start:stop]

    def leaf_values(self, t: int) -> np.ndarray:
        tree = self.tree_slice(t)
        return tree["value"][tree["feature"] < 0]


@njit(cache=True)
def _scan_split_candidates(
    order_t, xs_t, feat_ids, node_slot, resid, node_count, node_sum, min_leaf,
    best_score, best_thr,
):
    """Best split score per (candidate feature, frontier node).

    ``order_t``/``xs_t`` are (D, N): row indices and values of each feature in
    ascending order.  ``node_slot`` maps rows to frontier slots (-1 = not in
    play).  Scores are sum_left^2/n_left + sum_right^2/n_right, to be compared
    against the parent's sum^2/n; larger is better.
    """
    n = order_t.shape[1]
    n_slots = node_count.shape[0]
    for fi in range(feat_ids.shape[0]):
        f = feat_ids[fi]
        cnt = np.zeros(n_slots, np.float64)
        sm = np.zeros(n_slots, np.float64)
        last = np.zeros(n_slots, np.float32)
        for i in range(n):
            r = order_t[f, i]
            s = node_slot[r]
            if s < 0:
                continue
            v = xs_t[f, i]
            c = cnt[s]
            if c > 0.0 and v > last[s]:
                nl = c
                nr = node_count[s] - nl
                if nl >= min_leaf and nr >= min_leaf:
                    sl = sm[s]
                    sr = node_sum[s] - sl
                    score = sl * sl / nl + sr * sr / nr
                    if score > best_score[fi, s]:
                        best_score[fi, s] = score
                        thr = np.float32((np.float64(last[s]) + np.float64(v)) * 0.5)
                        if thr >= v:
                            # float32 rounding crossed the boundary; fall back
                            # to the largest left-side value.
                            thr = last[s]
                        best_thr[fi, s] = thr
            cnt[s] += 1.0
            sm[s] += resid[r]
            last[s] = v


def _walk_to_leaves(nodes: np.ndarray, root: int, x32: np.ndarray, depth: int) -> np.ndarray:
    """Vectorized tree descent; returns the leaf node index for each row of x32."""
    feature = nodes["feature"]
    threshold = nodes["threshold"]
    left = nodes["left"]
    right = nodes["right"]
    gather_feat = np.maximum(feature, 0)
    rows = np.arange(x32.shape[0])
    cur = np.full(x32.shape[0], root, dtype=np.int64)
    for _ in range(depth):
        f = gather_feat[cur]
        go_left = x32[rows, f] <= threshold[cur]
        cur = np.where(go_left, left[cur], right[cur])
    return cur


def gbrt_fit(features: np.ndarray, targets: np.ndarray, params: GbrtParams) -> TreeEnsemble:
    """Fit a boosted ensemble of regression trees.

    Args:
        features: (N, D) array; values are quantized to float32.
        targets: (N,) regression targets.
        params: boosting hyperparameters; ``subsample``/``colsample`` draw the
            per-tree row/feature subsets from ``numpy.random.default_rng(seed)``.

    Returns:
        A TreeEnsemble whose ``train_losses[t]`` records the training MSE after
        adding tree t (non-increasing for shrinkage in (0, 2]).
    """
    params.validate()
    x64 = np.asarray(features)
    y = np.asarray(targets, dtype=np.float64)
    if x64.ndim != 2:
        raise InvalidInputError(f"expected (N, D) features, got shape {x64.shape}")
    if y.shape != (x64.shape[0],):
        raise InvalidInputError(
            f"targets shape {y.shape} does not match {x64.shape[0]} samples"
        )
    n, d = x64.shape
    if n < 2:
        raise InsufficientDataError(f"need at least 2 samples to fit, got {n}")

    x32 = np.ascontiguousarray(x64, dtype=np.float32)
    order_t = np.ascontiguousarray(np.argsort(x32, axis=0, kind="stable").T, dtype=np.int32)
    xs_t = np.ascontiguousarray(np.take_along_axis(x32.T, order_t, axis=1))

    rng = np.random.default_rng(params.seed)
    base = np.float32(y.mean())
    resid = y - np.float64(base)
    # Quantize once so training updates, in-memory prediction and a reloaded
    # model all apply exactly the same factor.
    shrink = np.float64(np.float32(params.shrinkage))

    n_sub = max(1, int(round(params.subsample * n))) if params.subsample < 1.0 else n
    n_cols = max(1, int(round(params.colsample * d))) if params.colsample < 1.0 else d
    min_leaf = float(params.min_samples_leaf)

    all_nodes: list[np.ndarray] = []
    tree_roots = np.zeros(params.rounds, dtype=np.uint32)
    train_losses = np.zeros(params.rounds, dtype=np.float64)
    residual_ranges = np.zeros((params.rounds, 2), dtype=np.float64)
    node_base = 0

    for t in range(params.rounds):
        residual_ranges[t] = (resid.min(), resid.max())
        if n_cols < d:
            feat_ids = np.sort(rng.choice(d, size=n_cols, replace=False)).astype(np.int64)
        else:
            feat_ids = np.arange(d, dtype=np.int64)
        node_slot = np.zeros(n, dtype=np.int32)
        if n_sub < n:
            active = np.sort(rng.choice(n, size=n_sub, replace=False))
            node_slot.fill(-1)
            node_slot[active] = 0

        # Per-tree node records (local ids; root is 0).
        feats: list[int] = [-1]
        thrs: list[float] = [0.0]
        lefts: list[int] = [0]
        rights: list[int] = [0]
        vals: list[float] = [0.0]
        frontier = np.array([0], dtype=np.int64)  # node ids of current slots

        for _level in range(params.max_depth):
            n_slots = frontier.shape[0]
            act = node_slot >= 0
            slots_act = node_slot[act]
            node_count = np.bincount(slots_act, minlength=n_slots).astype(np.float64)
            node_sum = np.bincount(slots_act, weights=resid[act], minlength=n_slots)

            best_score = np.full((feat_ids.shape[0], n_slots), -np.inf, dtype=np.float64)
            best_thr = np.zeros((feat_ids.shape[0], n_slots), dtype=np.float32)
            _scan_split_candidates(
                order_t, xs_t, feat_ids, node_slot, resid,
                node_count, node_sum, min_leaf, best_score, best_thr,
            )

            pick = np.argmax(best_score, axis=0)
            cols = np.arange(n_slots)
            scores = best_score[pick, cols]
            with np.errstate(invalid="ignore", divide="ignore"):
                parent = np.where(node_count > 0, node_sum**2 / np.maximum(node_count, 1), 0.0)
            ok = scores > parent + _GAIN_EPS * (1.0 + np.abs(parent))

            slot_feat = np.where(ok, feat_ids[pick], -1).astype(np.int64)
            slot_thr = best_thr[pick, cols]

            # Finalize slots that stop here as leaves.
            new_frontier: list[int] = []
            child_slot_of = np.full(n_slots, -1, dtype=np.int64)
            for s in range(n_slots):
                nid = int(frontier[s])
                if slot_feat[s] < 0:
                    if node_count[s] > 0:
                        vals[nid] = node_sum[s] / node_count[s]
                else:
                    feats[nid] = int(slot_feat[s])
                    thrs[nid] = float(slot_thr[s])
                    child_slot_of[s] = len(new_frontier)
                    lid, rid = len(feats), len(feats) + 1
                    lefts[nid], rights[nid] = lid, rid
                    feats += [-1, -1]
                    thrs += [0.0, 0.0]
                    lefts += [lid, rid]
                    rights += [lid, rid]
                    vals += [0.0, 0.0]
                    new_frontier += [lid, rid]

            rows = np.nonzero(act)[0]
            s_of_row = node_slot[rows]
            splitting = slot_feat[s_of_row] >= 0
            rows_split = rows[splitting]
            if rows_split.size:
                frow = slot_feat[s_of_row[splitting]]
                go_left = x32[rows_split, frow] <= slot_thr[s_of_row[splitting]]
                node_slot[rows_split] = child_slot_of[s_of_row[splitting]] + np.where(go_left, 0, 1)
            node_slot[rows[~splitting]] = -1
            if not new_frontier:
                frontier = np.empty(0, dtype=np.int64)
                break
            frontier = np.array(new_frontier, dtype=np.int64)

        if frontier.size:
            n_slots = frontier.shape[0]
            act = node_slot >= 0
            slots_act = node_slot[act]
            node_count = np.bincount(slots_act, minlength=n_slots).astype(np.float64)
            node_sum = np.bincount(slots_act, weights=resid[act], minlength=n_slots)
            for s in range(n_slots):
                if node_count[s] > 0:
                    vals[int(frontier[s])] = node_sum[s] / node_count[s]

        tree = np.zeros(len(feats), dtype=NODE_DTYPE)
        tree["feature"] = feats
        tree["threshold"] = np.asarray(thrs, dtype=np.float32)
        tree["value"] = np.asarray(vals, dtype=np.float32)  # quantizes leaf means
        tree["left"] = np.asarray(lefts, dtype=np.int32)
        tree["right"] = np.asarray(rights, dtype=np.int32)

        # Update residuals with the quantized tree while links are still local.
        leaf_of_row = _walk_to_leaves(tree, 0, x32, params.max_depth)
        resid -= shrink * tree["value"][leaf_of_row].astype(np.float64)
        train_losses[t] = np.mean(resid**2)

        # Shift child links to ensemble-global ids; self-loops stay self-loops.
        tree["left"] += node_base
        tree["right"] += node_base
        tree_roots[t] = node_base
        node_base += len(tree)
        all_nodes.append(tree)

    nodes = np.concatenate(all_nodes)
    return TreeEnsemble(
        base_score=float(base),
        shrinkage=float(shrink),
        max_depth=int(params.max_depth),
        n_features=int(d),
        nodes=nodes,
        tree_roots=tree_roots,
        train_losses=train_losses,
        residual_ranges=residual_ranges,
    )


def gbrt_predict(model: TreeEnsemble, features: np.ndarray) -> np.ndarray:
    """Predict targets for (M, D) features; returns float64 (M,)."""
    x = np.asarray(features)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.n_features:
        raise InvalidInputError(
            f"expected (M, {model.n_features}) features, got shape {x.shape}"
        )
    x32 = np.ascontiguousarray(x, dtype=np.float32)
    out = np.full(x32.shape[0], np.float64(np.float32(model.base_score)))
    if model.max_depth == 0:
        for t in range(model.tree_count):
            root = int(model.tree_roots[t])
            out += model.shrinkage * np.float64(model.nodes["value"][root])
        return out
    for t in range(model.tree_count):
        leaves = _walk_to_leaves(model.nodes, int(model.tree_roots[t]), x32, model.max_depth)
        out += model.shrinkage * model.nodes["value"][leaves].astype(np.float64)
    return out


def ensemble_to_arrays(model: TreeEnsemble) -> dict[str, np.ndarray]:
    """Flat array form used by the model container."""
    return {
        "scalars": np.array(
            [model.base_score, model.shrinkage], dtype=np.float32
        ),
        "shape": np.array([model.max_depth, model.n_features], dtype=np.uint32),
        "tree_roots": model.tree_roots.astype(np.uint32),
        "nodes": model.nodes,
    }


def ensemble_from_arrays(arrays: dict[str, np.ndarray]) -> TreeEnsemble:
    scalars = arrays["scalars"]
    shape = arrays["shape"]
    return TreeEnsemble(
        base_score=float(scalars[0]),
        shrinkage=float(scalars[1]),
        max_depth=int(shape[0]),
        n_features=int(shape[1]),
        nodes=np.asarray(arrays["nodes"], dtype=NODE_DTYPE),
        tree_roots=np.asarray(arrays["tree_roots"], dtype=np.uint32),
    )
