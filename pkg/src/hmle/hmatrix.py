"""H-matrix approximation of Matérn covariance matrices.

Admissible blocks are compressed with partially pivoted adaptive cross
approximation (ACA), which only ever evaluates single rows and columns of
the block. Dense leaves are filled directly. For symmetric matrices only the
lower block triangle is stored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy.linalg import lapack

from .covkernel import MaternParams, _matern_unit, cov_block, cross_cov, kernel_constants
from .geometry import (
    DEFAULT_ETA,
    DEFAULT_LEAF_SIZE,
    BlockClusterTree,
    BlockNode,
    Cluster,
    build_block_tree,
    build_cluster_tree,
)

__all__ = [
    "FixedRank",
    "FixedAccuracy",
    "Dense",
    "LowRank",
    "Hier",
    "HMatrix",
    "assemble",
    "assemble_covariance",
    "matvec",
    "to_dense",
    "from_dense",
    "storage_bytes",
    "truncate",
    "DENSE_GUARD",
]

DENSE_GUARD = 4096
MAX_ACA_RANK = 256
RECOMPRESS_ABOVE = 16


@dataclass(frozen=True)
class FixedRank:
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("fixed rank must be >= 1")


@dataclass(frozen=True)
class FixedAccuracy:
    eps: float

    def __post_init__(self):
        if not (self.eps > 0):
            raise ValueError("accuracy eps must be > 0")


# ---------------------------------------------------------------------------
# payload nodes
# ---------------------------------------------------------------------------


class Dense:
    __slots__ = ("rows", "cols", "M")

    def __init__(self, rows: Cluster, cols: Cluster, M: np.ndarray):
        self.rows, self.cols, self.M = rows, cols, M


class LowRank:
    """Block approximated as U @ V.T."""

    __slots__ = ("rows", "cols", "U", "V")

    def __init__(self, rows: Cluster, cols: Cluster, U: np.ndarray, V: np.ndarray):
        self.rows, self.cols, self.U, self.V = rows, cols, U, V

    @property
    def rank(self) -> int:
        return self.U.shape[1]


class Hier:
    """Subdivided block.

    ``tri`` is None for a full grid, ``"sym"`` for a symmetric diagonal block
    storing only its lower triangle, and ``"lower"`` for a lower-triangular
    factor block (missing upper children are zero).
    """

    __slots__ = ("rows", "cols", "row_parts", "col_parts", "blocks", "tri", "_flat")

    def __init__(self, rows, cols, row_parts, col_parts, blocks, tri=None):
        self.rows, self.cols = rows, cols
        self.row_parts, self.col_parts = row_parts, col_parts
        self.blocks, self.tri = blocks, tri
        self._flat = None

    def flat(self):
        """Leaves as (leaf, row offset, col offset, transposed), cached per ``tri``.

        A leaf entry with transposed=False contributes leaf at the offsets;
        transposed=True contributes leaf.T (upper half of a symmetric block).
        """
        if self._flat is None or self._flat[0] != self.tri:
            out = []
            _collect(self, 0, 0, False, out)
            self._flat = (self.tri, out)
        return self._flat[1]


def _collect(X, r0, c0, T, out):
    if type(X) is not Hier:
        out.append((X, r0, c0, T))
        return
    for i, ti in enumerate(X.row_parts):
        di = ti.start - X.rows.start
        for j, sj in enumerate(X.col_parts):
            blk = X.blocks[i][j]
            if blk is None:
                continue
            dj = sj.start - X.cols.start
            if T:
                _collect(blk, r0 + dj, c0 + di, True, out)
            else:
                _collect(blk, r0 + di, c0 + dj, False, out)
            if X.tri == "sym" and i != j:
                if T:
                    _collect(blk, r0 + di, c0 + dj, False, out)
                else:
                    _collect(blk, r0 + dj, c0 + di, True, out)


def rel(c: Cluster, base: Cluster) -> slice:
    return slice(c.start - base.start, c.stop - base.start)


def _leaf_mm(B, X):
    if type(B) is Dense:
        return B.M @ X
    return B.U @ (B.V.T @ X)


def _leaf_mmT(B, X):
    if type(B) is Dense:
        return B.M.T @ X
    return B.V @ (B.U.T @ X)


def mm(B, X: np.ndarray) -> np.ndarray:
    """B @ X for a payload node and a dense (multi-)vector aligned to B.cols."""
    if type(B) is not Hier:
        return _leaf_mm(B, X)
    out = np.zeros((B.rows.size,) + X.shape[1:])
    for leaf, r0, c0, T in B.flat():
        if T:
            out[r0:r0 + leaf.cols.size] += _leaf_mmT(leaf, X[c0:c0 + leaf.rows.size])
        else:
            out[r0:r0 + leaf.rows.size] += _leaf_mm(leaf, X[c0:c0 + leaf.cols.size])
    return out


def mmT(B, X: np.ndarray) -> np.ndarray:
    """B.T @ X for a payload node and a dense (multi-)vector aligned to B.rows."""
    if type(B) is not Hier:
        return _leaf_mmT(B, X)
    out = np.zeros((B.cols.size,) + X.shape[1:])
    for leaf, r0, c0, T in B.flat():
        if T:
            out[c0:c0 + leaf.rows.size] += _leaf_mm(leaf, X[r0:r0 + leaf.cols.size])
        else:
            out[c0:c0 + leaf.cols.size] += _leaf_mmT(leaf, X[r0:r0 + leaf.rows.size])
    return out


def fill_dense(B, out: np.ndarray) -> None:
    """Write the block (in tree order, relative to B) into ``out``."""
    if type(B) is Dense:
        out[...] = B.M
        return
    if type(B) is LowRank:
        out[...] = B.U @ B.V.T
        return
    out[...] = 0.0
    for i, ti in enumerate(B.row_parts):
        for j, sj in enumerate(B.col_parts):
            blk = B.blocks[i][j]
            if blk is None:
                continue
            fill_dense(blk, out[rel(ti, B.rows), rel(sj, B.cols)])
            if B.tri == "sym" and i != j:
                out[rel(sj, B.rows), rel(ti, B.cols)] = out[rel(ti, B.rows), rel(sj, B.cols)].T


def payload_bytes(B) -> int:
    if type(B) is Dense:
        return B.M.nbytes
    if type(B) is LowRank:
        return B.U.nbytes + B.V.nbytes
    return sum(payload_bytes(b) for row in B.blocks for b in row if b is not None)


def iter_leaves(B):
    if type(B) is Hier:
        for row in B.blocks:
            for b in row:
                if b is not None:
                    yield from iter_leaves(b)
    else:
        yield B


def copy_payload(B):
    if type(B) is Dense:
        return Dense(B.rows, B.cols, B.M.copy())
    if type(B) is LowRank:
        return LowRank(B.rows, B.cols, B.U.copy(), B.V.copy())
    blocks = [[None if b is None else copy_payload(b) for b in row] for row in B.blocks]
    return Hier(B.rows, B.cols, B.row_parts, B.col_parts, blocks, B.tri)


# ---------------------------------------------------------------------------
# low-rank utilities
# ---------------------------------------------------------------------------


def truncate(U: np.ndarray, V: np.ndarray, eps: float | None, max_rank: int | None = None):
    """Recompress U @ V.T, dropping singular values with relative Frobenius tail <= eps."""
    r = U.shape[1]
    if r == 0:
        return U, V
    if r >= min(U.shape[0], V.shape[0]):
        # no smaller than the block itself: one SVD of the dense product is cheaper
        return dense_to_lowrank(U @ V.T, eps, max_rank)
    # Householder QR without forming Q; Q is applied to the kept columns only
    fu, tau_u = _geqrf(U)
    fv, tau_v = _geqrf(V)
    w, s, zt = np.linalg.svd(np.triu(fu[:r]) @ np.triu(fv[:r]).T)
    k = _truncation_rank(s, eps, max_rank)
    return _apply_q(fu, tau_u, w[:, :k] * s[:k]), _apply_q(fv, tau_v, zt[:k].T)


def _geqrf(A):
    f, tau, _, info = lapack.dgeqrf(A)
    if info != 0:
        raise np.linalg.LinAlgError(f"dgeqrf failed (info={info})")
    return f, tau


def _apply_q(f, tau, small):
    """Q @ [small; 0] for the Householder factor stored in (f, tau)."""
    m, k = f.shape[0], small.shape[1]
    if k == 0:
        return np.zeros((m, 0))
    c = np.zeros((m, k))
    c[: small.shape[0]] = small
    out, _, info = lapack.dormqr("L", "N", f, tau, c, lwork=max(1, 64 * k), overwrite_c=1)
    if info != 0:
        raise np.linalg.LinAlgError(f"dormqr failed (info={info})")
    return out


def _truncation_rank(s: np.ndarray, eps: float | None, max_rank: int | None) -> int:
    k = s.size
    if eps is not None and k:
        total = float(np.sum(s**2))
        if total == 0.0:
            return 0
        tail = np.cumsum((s**2)[::-1])[::-1]  # tail[i] = sum_{j >= i} s_j^2
        ok = np.nonzero(tail <= (eps * eps) * total)[0]
        k = int(ok[0]) if ok.size else s.size
    if max_rank is not None:
        k = min(k, max_rank)
    return k


def dense_to_lowrank(M: np.ndarray, eps: float | None, max_rank: int | None = None):
    w, s, zt = np.linalg.svd(M, full_matrices=False)
    k = _truncation_rank(s, eps, max_rank)
    return w[:, :k] * s[:k], zt[:k].T.copy()


# ---------------------------------------------------------------------------
# ACA
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _kernel_row(p, pts, sigma2, inv_ell, nu, lognorm, half_p):
    n = pts.shape[0]
    out = np.empty(n)
    d = pts.shape[1]
    for j in range(n):
        s = 0.0
        for k in range(d):
            t = p[k] - pts[j, k]
            s += t * t
        out[j] = sigma2 * _matern_unit(math.sqrt(s) * inv_ell, nu, lognorm, half_p)
    return out


@numba.njit(cache=True)
def _aca(prow, pcol, sigma2, ell, nu, lognorm, half_p, eps, max_rank):
    """Partially pivoted ACA of the kernel block rows(prow) x cols(pcol).

    eps <= 0 disables the accuracy stop (fixed-rank mode).
    """
    m = prow.shape[0]
    n = pcol.shape[0]
    inv_ell = 1.0 / ell
    U = np.zeros((m, max_rank))
    V = np.zeros((n, max_rank))
    row_used = np.zeros(m, dtype=np.bool_)
    col_used = np.zeros(n, dtype=np.bool_)
    norm2 = 0.0
    scale = 0.0
    r = 0
    i = 0
    while r < max_rank:
        row = _kernel_row(prow[i], pcol, sigma2, inv_ell, nu, lognorm, half_p)
        for q in range(r):
            a = U[i, q]
            if a != 0.0:
                for j in range(n):
                    row[j] -= a * V[j, q]
        row_used[i] = True
        jbest = -1
        vbest = -1.0
        for j in range(n):
            if not col_used[j]:
                v = abs(row[j])
                if v > vbest:
                    vbest = v
                    jbest = j
                if v > scale:
                    scale = v
        if jbest < 0:
            break
        if vbest <= 1e-15 * scale or vbest == 0.0:
            # zero residual row: try the next unused row
            nxt = -1
            for q in range(m):
                if not row_used[q]:
                    nxt = q
                    break
            if nxt < 0:
                break
            i = nxt
            continue
        piv = row[jbest]
        col = _kernel_row(pcol[jbest], prow, sigma2, inv_ell, nu, lognorm, half_p)
        for q in range(r):
            b = V[jbest, q]
            if b != 0.0:
                for a in range(m):
                    col[a] -= U[a, q] * b
        col_used[jbest] = True
        nu2 = 0.0
        nv2 = 0.0
        for a in range(m):
            U[a, r] = col[a]
            nu2 += col[a] * col[a]
        for j in range(n):
            V[j, r] = row[j] / piv
            nv2 += V[j, r] * V[j, r]
        cross = 0.0
        for q in range(r):
            su = 0.0
            sv = 0.0
            for a in range(m):
                su += U[a, q] * U[a, r]
            for j in range(n):
                sv += V[j, q] * V[j, r]
            cross += su * sv
        norm2 += 2.0 * cross + nu2 * nv2
        r += 1
        if eps > 0.0 and nu2 * nv2 <= eps * eps * norm2:
            break
        # next pivot row: largest entry of the new column among unused rows
        ibest = -1
        ub = -1.0
        for a in range(m):
            if not row_used[a]:
                v = abs(col[a])
                if v > ub:
                    ub = v
                    ibest = a
        if ibest < 0:
            break
        i = ibest
    return U[:, :r].copy(), V[:, :r].copy()


def aca_block(prow: np.ndarray, pcol: np.ndarray, params: MaternParams, mode) -> tuple[np.ndarray, np.ndarray]:
    """Low-rank factors (U, V) of the nugget-free kernel block between two point sets."""
    lognorm, half_p = kernel_constants(params.nu)
    m, n = prow.shape[0], pcol.shape[0]
    if isinstance(mode, FixedRank):
        cap = min(mode.k, m, n)
        eps = -1.0
    else:
        cap = min(m, n, MAX_ACA_RANK)
        eps = mode.eps
    U, V = _aca(prow, pcol, params.sigma2, params.ell, params.nu, lognorm, half_p, eps, cap)
    if eps > 0 and U.shape[1] > RECOMPRESS_ABOVE:
        U, V = truncate(U, V, eps)
    return U, V


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class HMatrix:
    """H-matrix approximation of a covariance matrix, in cluster-tree order."""

    root: object
    tree: BlockClusterTree
    mode: FixedRank | FixedAccuracy
    params: MaternParams | None  # None for matrices given explicitly
    symmetric: bool

    @property
    def shape(self) -> tuple[int, int]:
        return (self.tree.rows.n, self.tree.cols.n)

    @property
    def n(self) -> int:
        return self.tree.rows.n

    def leaves(self):
        return list(iter_leaves(self.root))


def _assemble_node(b: BlockNode, rpts, cpts, params, mode, nugget_diag: bool, sym: bool):
    t, s = b.rows, b.cols
    if b.kind == "admissible":
        U, V = aca_block(rpts[t.slice], cpts[s.slice], params, mode)
        return LowRank(t, s, U, V)
    if b.kind == "dense":
        M = cross_cov(rpts[t.slice], cpts[s.slice], params)
        if nugget_diag and t is s and params.tau2 > 0:
            M[np.diag_indices_from(M)] += params.tau2
        return Dense(t, s, M)
    diag = sym and t is s
    blocks = []
    for i, row in enumerate(b.children):
        out_row = []
        for j, child in enumerate(row):
            if diag and j > i:
                out_row.append(None)
            else:
                out_row.append(_assemble_node(child, rpts, cpts, params, mode, nugget_diag, sym))
        blocks.append(out_row)
    return Hier(t, s, b.row_parts, b.col_parts, blocks, "sym" if diag else None)


def assemble(block_tree: BlockClusterTree, locations, params: MaternParams, mode=None) -> HMatrix:
    """Assemble the H-matrix of C(theta) over ``block_tree``.

    When the row and column trees coincide only the lower block triangle is
    computed and the upper part is its mirror. ``locations`` must be the
    points the trees were built on (original order).
    """
    if mode is None:
        mode = FixedAccuracy(1e-6)
    rows, cols = block_tree.rows, block_tree.cols
    pts = np.asarray(locations, dtype=float)
    if pts.shape != rows.points.shape or not np.array_equal(pts, rows.points):
        raise ValueError("locations do not match the cluster tree")
    rpts = np.ascontiguousarray(rows.tree_points)
    cpts = rpts if cols is rows else np.ascontiguousarray(cols.tree_points)
    sym = block_tree.symmetric
    root = _assemble_node(block_tree.root, rpts, cpts, params, mode, sym, sym)
    return HMatrix(root, block_tree, mode, params, sym)


def assemble_covariance(locations, params: MaternParams, mode=None, eta: float = DEFAULT_ETA,
                        leaf_size: int = DEFAULT_LEAF_SIZE) -> HMatrix:
    """Convenience: build the trees and assemble in one call."""
    tree = build_cluster_tree(locations, leaf_size)
    return assemble(build_block_tree(tree, tree, eta), tree.points, params, mode)


def _from_dense_node(b: BlockNode, A: np.ndarray, eps: float, sym: bool):
    t, s = b.rows, b.cols
    if b.kind == "admissible":
        U, V = dense_to_lowrank(A[t.slice, s.slice], eps)
        return LowRank(t, s, U, V)
    if b.kind == "dense":
        return Dense(t, s, A[t.slice, s.slice].copy())
    diag = sym and t is s
    blocks = [[None if diag and j > i else _from_dense_node(child, A, eps, sym) for j, child in enumerate(row)]
              for i, row in enumerate(b.children)]
    return Hier(t, s, b.row_parts, b.col_parts, blocks, "sym" if diag else None)


def from_dense(A, locations=None, eps: float = 1e-12, eta: float = DEFAULT_ETA,
               leaf_size: int | None = None) -> HMatrix:
    """H-matrix view of an explicit symmetric matrix (testing and small problems).

    Without locations the result is a single dense leaf. With locations,
    admissible blocks are compressed by truncated SVD at accuracy ``eps``.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("from_dense expects a square matrix")
    n = A.shape[0]
    if locations is None:
        locations = np.arange(n, dtype=float).reshape(-1, 1)
        leaf_size = max(n, 1)
    tree = build_cluster_tree(locations, leaf_size or DEFAULT_LEAF_SIZE)
    if tree.n != n:
        raise ValueError("matrix and locations differ in size")
    bt = build_block_tree(tree, tree, eta)
    At = np.ascontiguousarray(A[np.ix_(tree.perm, tree.perm)])
    root = _from_dense_node(bt.root, At, eps, True)
    return HMatrix(root, bt, FixedAccuracy(eps), None, True)


def matvec(H: HMatrix, x) -> np.ndarray:
    """y = H x with x and y in the original ordering (vector or column stack)."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] != H.shape[1]:
        raise ValueError(f"dimension mismatch: H is {H.shape}, x has {x.shape[0]} rows")
    y = mm(H.root, x[H.tree.cols.perm])
    return H.tree.rows.to_original_order(y)


def to_dense(H: HMatrix) -> np.ndarray:
    """Dense reconstruction in the original ordering (small problems only)."""
    m, n = H.shape
    if max(m, n) > DENSE_GUARD:
        raise ValueError(f"to_dense refused: size {max(m, n)} exceeds guard {DENSE_GUARD}")
    tree_order = np.empty((m, n))
    fill_dense(H.root, tree_order)
    out = np.empty((m, n))
    out[np.ix_(H.tree.rows.perm, H.tree.cols.perm)] = tree_order
    return out


def storage_bytes(H: HMatrix) -> tuple[int, float]:
    """Payload bytes and ratio against a dense float64 matrix."""
    nbytes = payload_bytes(H.root)
    m, n = H.shape
    return nbytes, nbytes / (m * n * 8.0)


def exact_covariance(locations, params: MaternParams) -> np.ndarray:
    """Dense C(theta) (test oracle helper)."""
    pts = np.asarray(locations, dtype=float)
    idx = np.arange(pts.shape[0])
    return cov_block(idx, idx, pts, params)
