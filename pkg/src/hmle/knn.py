"""k-nearest-neighbour regression baseline with cross-validated k.

Candidate neighbours come from a k-d tree (scipy's cKDTree, median splits,
bucket size 16). The final selection recomputes squared Euclidean
distances and orders by (distance, original index), so ties are broken
deterministically and the result equals a brute-force search exactly.
Predictions are correctly rounded means (math.fsum), independent of the
summation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

__all__ = ["KdTree", "knn_predict", "select_k", "KSelection", "BUCKET"]

BUCKET = 16
_EXTRA = 8  # spare neighbours fetched to detect ties at the k-th distance


class KdTree:
    """Exact kNN index over training locations."""

    def __init__(self, locations, values=None):
        pts = np.ascontiguousarray(np.asarray(locations, dtype=float))
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("empty training set")
        if not np.all(np.isfinite(pts)):
            raise ValueError("invalid location: non-finite coordinate")
        self.points = pts
        self.values = None if values is None else np.asarray(values, dtype=float).ravel()
        if self.values is not None and self.values.shape[0] != pts.shape[0]:
            raise ValueError("values and locations differ in length")
        self._tree = cKDTree(pts, leafsize=BUCKET, balanced_tree=True, compact_nodes=True)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def _sq_dist(self, q: np.ndarray, idx: np.ndarray) -> np.ndarray:
        return ((self.points[idx] - q) ** 2).sum(axis=1)

    def query(self, queries, k: int) -> np.ndarray:
        """Indices of the k nearest training points per query, ordered by (distance, index)."""
        q = np.asarray(queries, dtype=float)
        if q.ndim == 1:
            q = q.reshape(1, -1)
        if not 1 <= k <= self.n:
            raise ValueError(f"k = {k} must lie in [1, n_train = {self.n}]")
        out = np.empty((q.shape[0], k), dtype=np.int64)
        if q.shape[0] == 0:
            return out
        kq = min(k + _EXTRA, self.n)
        dist, cand = self._tree.query(q, k=kq)
        dist = dist.reshape(q.shape[0], kq)
        cand = cand.reshape(q.shape[0], kq)
        for i in range(q.shape[0]):
            dk = dist[i, k - 1]
            if kq < self.n and not dist[i, kq - 1] > dk * (1.0 + 1e-9) + 1e-300:
                # possible ties beyond the fetched set: widen to a ball query
                idx = np.asarray(self._tree.query_ball_point(q[i], dk * (1.0 + 1e-9) + 1e-300), dtype=np.int64)
            else:
                idx = cand[i]
            d2 = self._sq_dist(q[i], idx)
            order = np.lexsort((idx, d2))[:k]
            out[i] = idx[order]
        return out


def _mean(values: np.ndarray) -> float:
    return math.fsum(values) / values.size


def knn_predict(train_locations, train_z, query_locations, k: int, tree: KdTree | None = None) -> np.ndarray:
    """Unweighted mean of the k nearest training values at each query location."""
    z = np.asarray(train_z, dtype=float).ravel()
    if tree is None:
        tree = KdTree(train_locations, z)
    if k > tree.n:
        raise ValueError(f"k = {k} exceeds the training size {tree.n}")
    nb = tree.query(query_locations, k)
    return np.array([_mean(z[row]) for row in nb])


@dataclass(frozen=True)
class KSelection:
    k: int
    cv_rmse: dict[int, float]
    mean_rmse: float  # global-mean predictor under the same splits


def select_k(train_locations, train_z, candidate_ks=range(1, 21), splits: int = 100, seed: int = 0,
             val_fraction: float = 0.1) -> KSelection:
    """Monte-Carlo cross-validation (validation:train = 1:9) of the neighbour count.

    Returns the k with the smallest mean RMSE; values within 1e-12 count as
    ties and go to the smaller k.
    """
    pts = np.asarray(train_locations, dtype=float)
    z = np.asarray(train_z, dtype=float).ravel()
    n = pts.shape[0]
    ks = sorted({int(k) for k in candidate_ks})
    if not ks or ks[0] < 1:
        raise ValueError("candidate ks must be positive integers")
    if splits < 1:
        raise ValueError("splits must be >= 1")
    n_val = int(round(val_fraction * n))
    n_fit = n - n_val
    if n_val < 1 or n_fit < ks[-1]:
        raise ValueError(f"degenerate split: n = {n} gives {n_val} validation and {n_fit} training points")
    rng = np.random.default_rng(seed)
    sq = {k: 0.0 for k in ks}
    sq_mean = 0.0
    kmax = ks[-1]
    for _ in range(splits):
        perm = rng.permutation(n)
        val, fit_idx = perm[:n_val], np.sort(perm[n_val:])
        tree = KdTree(pts[fit_idx])
        nb = tree.query(pts[val], kmax)
        vals = z[fit_idx][nb]
        csum = np.cumsum(vals, axis=1)
        for k in ks:
            sq[k] += float(np.mean((csum[:, k - 1] / k - z[val]) ** 2))
        sq_mean += float(np.mean((z[fit_idx].mean() - z[val]) ** 2))
    cv = {k: math.sqrt(sq[k] / splits) for k in ks}
    best = min(cv.values())
    k_star = next(k for k in ks if cv[k] <= best + 1e-12)
    return KSelection(k_star, cv, math.sqrt(sq_mean / splits))
