"""Cluster tree and block cluster tree over scattered locations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

__all__ = [
    "Cluster",
    "ClusterTree",
    "BlockNode",
    "BlockClusterTree",
    "build_cluster_tree",
    "build_block_tree",
    "DEFAULT_ETA",
    "DEFAULT_LEAF_SIZE",
]

DEFAULT_ETA = 2.0
DEFAULT_LEAF_SIZE = 32


@dataclass(eq=False)
class Cluster:
    """A contiguous range ``[start, stop)`` of the tree ordering."""

    start: int
    stop: int
    lo: np.ndarray
    hi: np.ndarray
    level: int = 0
    children: tuple["Cluster", ...] = ()

    @property
    def size(self) -> int:
        return self.stop - self.start

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def slice(self) -> slice:
        return slice(self.start, self.stop)

    @property
    def diameter(self) -> float:
        return float(np.sqrt(np.sum((self.hi - self.lo) ** 2)))

    def distance(self, other: "Cluster") -> float:
        gap = np.maximum(0.0, np.maximum(self.lo - other.hi, other.lo - self.hi))
        return float(np.sqrt(np.sum(gap**2)))

    def __repr__(self):
        return f"Cluster([{self.start}, {self.stop}), level={self.level})"


@dataclass(eq=False)
class ClusterTree:
    root: Cluster
    perm: np.ndarray  # perm[k] = original index at tree position k
    points: np.ndarray  # original order
    leaf_size: int
    iperm: np.ndarray = field(init=False)

    def __post_init__(self):
        self.iperm = np.empty_like(self.perm)
        self.iperm[self.perm] = np.arange(self.perm.size)

    @property
    def n(self) -> int:
        return int(self.perm.size)

    @property
    def tree_points(self) -> np.ndarray:
        return self.points[self.perm]

    def nodes(self) -> Iterator[Cluster]:
        stack = [self.root]
        while stack:
            c = stack.pop()
            yield c
            stack.extend(reversed(c.children))

    def leaves(self) -> list[Cluster]:
        return [c for c in self.nodes() if c.is_leaf]

    def depth(self) -> int:
        return max(c.level for c in self.nodes())

    def to_tree_order(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values)[self.perm]

    def to_original_order(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values)
        out = np.empty_like(values)
        out[self.perm] = values
        return out


def _as_points(locations) -> np.ndarray:
    pts = np.asarray(locations, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1) if pts.size else pts.reshape(0, 2)
    if pts.shape[0] == 0:
        raise ValueError("empty dataset")
    if not np.all(np.isfinite(pts)):
        raise ValueError("invalid location: non-finite coordinate")
    return np.ascontiguousarray(pts)


def build_cluster_tree(locations, leaf_size: int = DEFAULT_LEAF_SIZE) -> ClusterTree:
    """Binary tree by median splits along the longest bounding-box axis.

    Ties in the split coordinate are broken by original index so the
    ordering is deterministic.
    """
    pts = _as_points(locations)
    if leaf_size < 1:
        raise ValueError("leaf_size must be >= 1")
    n = pts.shape[0]
    perm = np.arange(n)

    def build(start: int, stop: int, level: int) -> Cluster:
        idx = perm[start:stop]
        sub = pts[idx]
        lo = sub.min(axis=0)
        hi = sub.max(axis=0)
        node = Cluster(start, stop, lo, hi, level)
        size = stop - start
        if size <= leaf_size:
            return node
        axis = int(np.argmax(hi - lo))
        order = np.lexsort((idx, sub[:, axis]))
        perm[start:stop] = idx[order]
        mid = start + size // 2
        node.children = (build(start, mid, level + 1), build(mid, stop, level + 1))
        return node

    root = build(0, n, 0)
    return ClusterTree(root=root, perm=perm, points=pts, leaf_size=leaf_size)


@dataclass(eq=False)
class BlockNode:
    """Node of the block cluster tree.

    ``kind`` is ``"admissible"`` or ``"dense"`` for leaves and ``"split"``
    for inner nodes; inner nodes carry a grid of children indexed by
    ``row_parts`` x ``col_parts``.
    """

    rows: Cluster
    cols: Cluster
    kind: str
    row_parts: tuple[Cluster, ...] = ()
    col_parts: tuple[Cluster, ...] = ()
    children: list[list["BlockNode"]] | None = None

    @property
    def is_leaf(self) -> bool:
        return self.children is None


@dataclass(eq=False)
class BlockClusterTree:
    root: BlockNode
    rows: ClusterTree
    cols: ClusterTree
    eta: float

    def leaves(self) -> list[BlockNode]:
        out = []
        stack = [self.root]
        while stack:
            b = stack.pop()
            if b.is_leaf:
                out.append(b)
            else:
                for row in reversed(b.children):
                    stack.extend(reversed(row))
        return out

    @property
    def symmetric(self) -> bool:
        return self.rows is self.cols


def is_admissible(t: Cluster, s: Cluster, eta: float) -> bool:
    dist = t.distance(s)
    return dist > 0.0 and min(t.diameter, s.diameter) <= eta * dist


def build_block_tree(rows: ClusterTree, cols: ClusterTree, eta: float = DEFAULT_ETA) -> BlockClusterTree:
    """Recursively subdivide ``rows x cols`` until blocks are admissible or leaf pairs."""
    if not (eta > 0 and math.isfinite(eta)):
        raise ValueError("eta must be a positive real")
    if rows.points.shape[1] != cols.points.shape[1]:
        raise ValueError("row and column locations differ in dimension")

    def build(t: Cluster, s: Cluster) -> BlockNode:
        if is_admissible(t, s, eta):
            return BlockNode(t, s, "admissible")
        if t.is_leaf and s.is_leaf:
            return BlockNode(t, s, "dense")
        rparts = t.children or (t,)
        cparts = s.children or (s,)
        node = BlockNode(t, s, "split", rparts, cparts)
        node.children = [[build(ti, sj) for sj in cparts] for ti in rparts]
        return node

    return BlockClusterTree(build(rows.root, cols.root), rows, cols, eta)
