"""H-Cholesky and H-LDL^T factorizations with triangular solves.

The factorization works block-recursively on a copy of the lower block
triangle: factor the leading diagonal block, solve for the off-diagonal
block, apply a truncated low-rank update to the trailing block, recurse.
All arithmetic stays in cluster-tree order; permutations are applied at
the solve boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack, solve_triangular

from .hmatrix import (
    Dense,
    FixedRank,
    Hier,
    HMatrix,
    LowRank,
    copy_payload,
    dense_to_lowrank,
    fill_dense,
    mm,
    mmT,
    rel,
    truncate,
)

__all__ = [
    "FactorizationError",
    "IndefiniteFactorError",
    "HFactor",
    "h_cholesky",
    "h_ldl",
    "solve_lower",
    "solve_factored",
    "log_det",
    "CLAMP_REL",
]

# LDL pivots in [-CLAMP_REL * max_diag, 0) are treated as rounding noise.
CLAMP_REL = 1e-14
# Pending low-rank updates are recompressed once their rank exceeds this.
ACCUMULATE_RANK = 32
NUGGET_HINT = "matrix not numerically SPD; increase nugget tau2"


class FactorizationError(ArithmeticError):
    """Raised when a pivot makes the factorization impossible."""

    def __init__(self, message: str, pivot_index: int | None = None):
        super().__init__(message if pivot_index is None else f"{message} (pivot at index {pivot_index})")
        self.pivot_index = pivot_index


class IndefiniteFactorError(ArithmeticError):
    """Raised when a log-determinant is requested from an LDL factor with D <= 0."""


@dataclass(eq=False)
class HFactor:
    """Lower triangular H-factor L (and D for the LDL form), in tree order."""

    L: object
    form: str
    eps_f: float | None
    perm: np.ndarray
    D: np.ndarray | None = None
    diag: np.ndarray | None = None  # diagonal of L for the Cholesky form
    n_clamped: int = 0
    negative_pivots: list[int] = field(default_factory=list)

    @property
    def n(self) -> int:
        return int(self.perm.size)

    @property
    def status(self) -> str:
        if self.negative_pivots:
            return "failed"
        return "clamped" if self.n_clamped else "success"

    def to_dense_factor(self) -> np.ndarray:
        """Dense L in tree order (small problems only)."""
        out = np.empty((self.n, self.n))
        fill_dense(self.L, out)
        return out


class _Ctx:
    __slots__ = ("ldl", "eps", "max_rank", "D", "Ldiag", "max_diag", "perm", "n_clamped", "negatives", "fresh",
                 "pending", "dense_acc")

    def __init__(self, ldl, eps, max_rank, n, max_diag, perm):
        self.ldl = ldl
        self.eps = eps
        self.max_rank = max_rank
        self.D = np.empty(n) if ldl else None
        self.Ldiag = None if ldl else np.empty(n)
        self.max_diag = max_diag
        self.perm = perm
        self.n_clamped = 0
        self.negatives = []
        # ids of low-rank blocks whose factors are already recompressed
        self.fresh = set()
        # low-rank updates parked on subdivided blocks: id -> ([U...], [V...], rank)
        self.pending = {}
        # small low-rank blocks whose updates are summed densely: id -> m x n array
        self.dense_acc = {}

    def dvec(self, c):
        return None if self.D is None else self.D[c.start:c.stop]


# ---------------------------------------------------------------------------
# block helpers
# ---------------------------------------------------------------------------


def _sub(X, rc, cc):
    if type(X) is Hier:
        i = 0 if X.row_parts[0] is rc else 1
        j = 0 if X.col_parts[0] is cc else 1
        blk = X.blocks[i][j]
        assert X.row_parts[i] is rc and X.col_parts[j] is cc and blk is not None
        return blk
    assert X.rows is rc and X.cols is cc
    return X


def _kparts(A, B):
    if type(A) is Hier:
        return A.col_parts
    if type(B) is Hier:
        return B.col_parts
    return (A.cols,)


def _scaled(V, d):
    return V if d is None else V * d[:, None]


def _add_lowrank(C, U, V, ctx):
    """C += U @ V.T (symmetric blocks receive only their stored lower part)."""
    if U.shape[1] == 0:
        return
    if type(C) is Dense:
        C.M += U @ V.T
    elif type(C) is LowRank:
        acc = ctx.dense_acc.get(id(C))
        if acc is not None:
            acc += U @ V.T
            return
        C.U = np.hstack((C.U, U))
        C.V = np.hstack((C.V, V))
        r, side = C.U.shape[1], min(C.U.shape[0], C.V.shape[0])
        if r >= side:
            # rank reached the block size: sum further updates densely until read
            ctx.dense_acc[id(C)] = C.U @ C.V.T
        elif r > ACCUMULATE_RANK:
            C.U, C.V = truncate(C.U, C.V, ctx.eps, ctx.max_rank)
            ctx.fresh.add(id(C))
        else:
            ctx.fresh.discard(id(C))
    else:
        acc = ctx.pending.get(id(C))
        if acc is None:
            acc = ctx.pending[id(C)] = ([], [], [0])
        acc[0].append(U)
        acc[1].append(V)
        acc[2][0] += U.shape[1]
        if acc[2][0] > ACCUMULATE_RANK:
            _push(C, ctx)


def _push(C, ctx):
    """Hand the updates parked on a subdivided block down to its children."""
    acc = ctx.pending.pop(id(C), None)
    if acc is None:
        return
    U = acc[0][0] if len(acc[0]) == 1 else np.hstack(acc[0])
    V = acc[1][0] if len(acc[1]) == 1 else np.hstack(acc[1])
    for i, ti in enumerate(C.row_parts):
        ui = U[rel(ti, C.rows)]
        for j, sj in enumerate(C.col_parts):
            blk = C.blocks[i][j]
            if blk is not None:
                _add_lowrank(blk, ui, V[rel(sj, C.cols)], ctx)


def _settle(C, ctx):
    """Recompress a low-rank block that has a dense update sum pending."""
    acc = ctx.dense_acc.pop(id(C), None)
    if acc is not None:
        C.U, C.V = dense_to_lowrank(acc, ctx.eps, ctx.max_rank)
        ctx.fresh.add(id(C))


def _add_dense(C, P, ctx):
    if type(C) is Dense:
        C.M += P
    elif type(C) is LowRank:
        acc = ctx.dense_acc.get(id(C))
        if acc is not None:
            acc += P
            return
        C.U, C.V = dense_to_lowrank(C.U @ C.V.T + P, ctx.eps, ctx.max_rank)
    else:
        for i, ti in enumerate(C.row_parts):
            for j, sj in enumerate(C.col_parts):
                blk = C.blocks[i][j]
                if blk is not None:
                    _add_dense(blk, P[rel(ti, C.rows), rel(sj, C.cols)], ctx)


def _product_dense(A, B, ctx):
    """Dense A diag(d) B.T where d is the pivot vector over A.cols (LDL only)."""
    d = ctx.dvec(A.cols)
    if type(A) is LowRank:
        return A.U @ mm(B, _scaled(A.V, d)).T
    if type(B) is LowRank:
        return mm(A, _scaled(B.V, d)) @ B.U.T
    if type(A) is Dense and type(B) is Dense:
        return _scaled(A.M.T, d).T @ B.M.T
    out = np.zeros((A.rows.size, B.rows.size))
    rparts = A.row_parts if type(A) is Hier else (A.rows,)
    cparts = B.row_parts if type(B) is Hier else (B.rows,)
    for ti in rparts:
        for sj in cparts:
            for rk in _kparts(A, B):
                out[rel(ti, A.rows), rel(sj, B.rows)] += _product_dense(_sub(A, ti, rk), _sub(B, sj, rk), ctx)
    return out


def _product_lowrank(A, B, ctx):
    """Low-rank (U, V) with U V.T ~= A diag(d) B.T."""
    d = ctx.dvec(A.cols)
    if type(A) is LowRank:
        return A.U, mm(B, _scaled(A.V, d))
    if type(B) is LowRank:
        return mm(A, _scaled(B.V, d)), B.U
    if type(A) is Dense and type(B) is Dense:
        return dense_to_lowrank(_scaled(A.M.T, d).T @ B.M.T, ctx.eps, ctx.max_rank)
    m, n = A.rows.size, B.rows.size
    us, vs = [], []
    rparts = A.row_parts if type(A) is Hier else (A.rows,)
    cparts = B.row_parts if type(B) is Hier else (B.rows,)
    for ti in rparts:
        for sj in cparts:
            for rk in _kparts(A, B):
                u, v = _product_lowrank(_sub(A, ti, rk), _sub(B, sj, rk), ctx)
                if u.shape[1] == 0:
                    continue
                uu = np.zeros((m, u.shape[1]))
                vv = np.zeros((n, u.shape[1]))
                uu[rel(ti, A.rows)] = u
                vv[rel(sj, B.rows)] = v
                us.append(uu)
                vs.append(vv)
    if not us:
        return np.zeros((m, 0)), np.zeros((n, 0))
    U, V = np.hstack(us), np.hstack(vs)
    if U.shape[1] > min(ACCUMULATE_RANK, m // 2, n // 2):
        U, V = truncate(U, V, ctx.eps, ctx.max_rank)
    return U, V


def _addmul(C, A, B, ctx, use_d: bool):
    """C -= A diag(d) B.T, with d taken from the pivots when ``use_d``."""
    d = ctx.dvec(A.cols) if use_d else None
    if type(A) is LowRank:
        _add_lowrank(C, -A.U, mm(B, _scaled(A.V, d)), ctx)
    elif type(B) is LowRank:
        _add_lowrank(C, -mm(A, _scaled(B.V, d)), B.U, ctx)
    elif type(A) is Dense and type(B) is Dense:
        _add_dense(C, -(_scaled(A.M.T, d).T @ B.M.T), ctx)
    elif type(C) is Hier:
        kparts = _kparts(A, B)
        for i, ti in enumerate(C.row_parts):
            for j, sj in enumerate(C.col_parts):
                blk = C.blocks[i][j]
                if blk is None:
                    continue
                for rk in kparts:
                    _addmul(blk, _sub(A, ti, rk), _sub(B, sj, rk), ctx, use_d)
    else:
        saved = ctx.D
        if not use_d:
            ctx.D = None
        try:
            if type(C) is Dense:
                C.M -= _product_dense(A, B, ctx)
            else:
                u, v = _product_lowrank(A, B, ctx)
                _add_lowrank(C, -u, v, ctx)
        finally:
            ctx.D = saved


# ---------------------------------------------------------------------------
# triangular solves with dense right-hand sides
# ---------------------------------------------------------------------------


def _solve_lower(L, B, unit):
    """L^{-1} B for a lower-triangular factor block."""
    if type(L) is Dense:
        return solve_triangular(L.M, B, lower=True, unit_diagonal=unit, check_finite=False)
    L00, L10, L11 = L.blocks[0][0], L.blocks[1][0], L.blocks[1][1]
    k = L.row_parts[0].size
    x0 = _solve_lower(L00, B[:k], unit)
    x1 = _solve_lower(L11, B[k:] - mm(L10, x0), unit)
    return np.concatenate((x0, x1))


def _solve_upper(L, B, unit):
    """L^{-T} B for a lower-triangular factor block."""
    if type(L) is Dense:
        return solve_triangular(L.M, B, lower=True, trans="T", unit_diagonal=unit, check_finite=False)
    L00, L10, L11 = L.blocks[0][0], L.blocks[1][0], L.blocks[1][1]
    k = L.row_parts[0].size
    x1 = _solve_upper(L11, B[k:], unit)
    x0 = _solve_upper(L00, B[:k] - mmT(L10, x1), unit)
    return np.concatenate((x0, x1))


def _trsm_right(L, X, ctx):
    """X := X L^{-T} in place (L unit lower for LDL)."""
    unit = ctx.ldl
    if type(X) is Dense:
        X.M = _solve_lower(L, X.M.T, unit).T.copy()
    elif type(X) is LowRank:
        _settle(X, ctx)
        X.V = _solve_lower(L, X.V, unit)
    elif type(L) is Dense:
        _push(X, ctx)
        for i in range(len(X.row_parts)):
            _trsm_right(L, X.blocks[i][0], ctx)
    else:
        _push(X, ctx)
        L00, L10, L11 = L.blocks[0][0], L.blocks[1][0], L.blocks[1][1]
        for i in range(len(X.row_parts)):
            _trsm_right(L00, X.blocks[i][0], ctx)
            _addmul(X.blocks[i][1], X.blocks[i][0], L10, ctx, use_d=False)
            _trsm_right(L11, X.blocks[i][1], ctx)


def _flush(X, ctx):
    """Recompress low-rank blocks that accumulated untruncated updates."""
    if type(X) is LowRank:
        _settle(X, ctx)
        if id(X) not in ctx.fresh:
            X.U, X.V = truncate(X.U, X.V, ctx.eps, ctx.max_rank)
            ctx.fresh.add(id(X))
    elif type(X) is Hier:
        _push(X, ctx)
        for row in X.blocks:
            for b in row:
                if b is not None:
                    _flush(b, ctx)


def _scale_cols(X, d):
    if type(X) is Dense:
        X.M /= d[None, :]
    elif type(X) is LowRank:
        X.V /= d[:, None]
    else:
        for i in range(len(X.row_parts)):
            for j, sj in enumerate(X.col_parts):
                _scale_cols(X.blocks[i][j], d[rel(sj, X.cols)])


# ---------------------------------------------------------------------------
# dense leaf factorizations
# ---------------------------------------------------------------------------


def _leaf_cholesky(A: Dense, ctx):
    c, info = lapack.dpotrf(A.M, lower=1, clean=1, overwrite_a=0)
    if info != 0:
        local = info - 1 if info > 0 else 0
        raise FactorizationError(NUGGET_HINT, int(ctx.perm[A.rows.start + local]))
    A.M = c
    ctx.Ldiag[A.rows.slice] = np.diag(c)


def _leaf_ldl(A: Dense, ctx):
    c, info = lapack.dpotrf(A.M, lower=1, clean=1, overwrite_a=0)
    if info == 0:
        dg = np.diag(c).copy()
        A.M = c / dg[None, :]
        ctx.D[A.rows.slice] = dg * dg
        return
    M = A.M
    m = M.shape[0]
    L = np.eye(m)
    d = np.empty(m)
    tol = CLAMP_REL * ctx.max_diag
    for j in range(m):
        lj = L[j, :j]
        dj = M[j, j] - np.dot(lj * lj, d[:j])
        if dj == 0.0:
            raise FactorizationError(NUGGET_HINT, int(ctx.perm[A.rows.start + j]))
        if -tol <= dj < 0.0:
            dj = tol
            ctx.n_clamped += 1
        elif dj < 0.0:
            ctx.negatives.append(int(ctx.perm[A.rows.start + j]))
        d[j] = dj
        if j + 1 < m:
            L[j + 1:, j] = (M[j + 1:, j] - L[j + 1:, :j] @ (lj * d[:j])) / dj
    A.M = L
    ctx.D[A.rows.slice] = d


def _factor(A, ctx):
    if type(A) is Dense:
        (_leaf_ldl if ctx.ldl else _leaf_cholesky)(A, ctx)
        return
    if type(A) is not Hier or A.tri != "sym":
        raise TypeError("diagonal block must be dense or a symmetric subdivided block")
    _push(A, ctx)
    A00, A10, A11 = A.blocks[0][0], A.blocks[1][0], A.blocks[1][1]
    _factor(A00, ctx)
    _trsm_right(A00, A10, ctx)
    if ctx.ldl:
        _scale_cols(A10, ctx.dvec(A.col_parts[0]))
    _flush(A10, ctx)
    _addmul(A11, A10, A10, ctx, use_d=ctx.ldl)
    _factor(A11, ctx)
    A.tri = "lower"


def _max_diag(root) -> float:
    if type(root) is Dense:
        return float(np.max(np.abs(np.diag(root.M))))
    return max(_max_diag(root.blocks[0][0]), _max_diag(root.blocks[1][1]))


def _factorize(H: HMatrix, eps_f, ldl: bool) -> HFactor:
    if not H.symmetric:
        raise ValueError("factorization requires a symmetric H-matrix")
    max_rank = None
    if eps_f is None:
        if isinstance(H.mode, FixedRank):
            max_rank = H.mode.k
            eps_f = 1e-12
        else:
            eps_f = H.mode.eps
    if not (eps_f > 0):
        raise ValueError("eps_f must be > 0")
    root = copy_payload(H.root)
    perm = H.tree.rows.perm
    ctx = _Ctx(ldl, eps_f, max_rank, H.n, _max_diag(root), perm)
    _factor(root, ctx)
    assert not ctx.pending and not ctx.dense_acc
    return HFactor(
        L=root,
        form="ldl" if ldl else "cholesky",
        eps_f=eps_f,
        perm=perm,
        D=ctx.D,
        diag=ctx.Ldiag,
        n_clamped=ctx.n_clamped,
        negative_pivots=ctx.negatives,
    )


def h_cholesky(H: HMatrix, eps_f: float | None = None) -> HFactor:
    """H-Cholesky factor L with L L^T ~= H.

    ``eps_f`` is the truncation accuracy of the trailing updates; by default
    the assembly accuracy. Raises FactorizationError on a nonpositive pivot.
    """
    return _factorize(H, eps_f, ldl=False)


def h_ldl(H: HMatrix, eps_f: float | None = None) -> HFactor:
    """Square-root-free H-LDL^T factorization (unit lower L, diagonal D)."""
    return _factorize(H, eps_f, ldl=True)


def _check(F: HFactor, b):
    b = np.asarray(b, dtype=float)
    if b.shape[0] != F.n:
        raise ValueError(f"dimension mismatch: factor is {F.n}, rhs has {b.shape[0]} rows")
    return b


def solve_lower(F: HFactor, b) -> np.ndarray:
    """v with L v = P b, where P maps the original to the tree ordering.

    ``b`` is given in the original ordering; ``v`` is returned in tree order.
    """
    b = _check(F, b)
    return _solve_lower(F.L, b[F.perm], F.form == "ldl")


def solve_factored(F: HFactor, b) -> np.ndarray:
    """x with L D L^T x = b (original ordering in and out)."""
    b = _check(F, b)
    ldl = F.form == "ldl"
    y = _solve_lower(F.L, b[F.perm], ldl)
    if ldl:
        y = y / (F.D if y.ndim == 1 else F.D[:, None])
    x = _solve_upper(F.L, y, ldl)
    out = np.empty_like(x)
    out[F.perm] = x
    return out


def log_det(F: HFactor) -> float:
    """log det of the factored matrix; requires a positive pivot set."""
    if F.form == "cholesky":
        return 2.0 * float(np.sum(np.log(F.diag)))
    if F.negative_pivots or np.any(F.D <= 0):
        raise IndefiniteFactorError(f"indefinite factor: {len(F.negative_pivots)} negative pivots; increase nugget tau2")
    return float(np.sum(np.log(F.D)))
