"""Gaussian log-likelihood through the H-matrix pipeline."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .covkernel import MaternParams
from .geometry import DEFAULT_ETA, DEFAULT_LEAF_SIZE, build_block_tree, build_cluster_tree
from .hfactor import h_cholesky, h_ldl, log_det, solve_lower
from .hmatrix import FixedAccuracy, FixedRank, assemble

__all__ = ["LogLikResult", "LikelihoodModel", "evaluate"]

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class LogLikResult:
    loglik: float
    logdet: float
    quad_form: float
    n: int
    timing: float
    factor_status: str


class LikelihoodModel:
    """Fixed data and geometry; evaluates L(theta) for many theta.

    The cluster and block trees depend only on the locations, so they are
    built once. Covariance assembly and factorization are redone per call.
    """

    def __init__(self, locations, z, eps: float = 1e-6, rank: int | None = None, form: str = "ldl",
                 eta: float = DEFAULT_ETA, leaf_size: int = DEFAULT_LEAF_SIZE):
        z = np.asarray(z, dtype=float).ravel()
        tree = build_cluster_tree(locations, leaf_size)
        if z.shape[0] != tree.n:
            raise ValueError(f"dimension mismatch: {tree.n} locations, {z.shape[0]} observations")
        if not np.all(np.isfinite(z)):
            raise ValueError("observations must be finite")
        if form not in ("ldl", "cholesky"):
            raise ValueError(f"unknown factorization form {form!r}")
        self.tree = tree
        self.block_tree = build_block_tree(tree, tree, eta)
        self.z = z
        self.form = form
        self.mode = FixedRank(rank) if rank is not None else FixedAccuracy(eps)

    @property
    def n(self) -> int:
        return self.tree.n

    def __call__(self, params: MaternParams) -> LogLikResult:
        t0 = time.perf_counter()
        H = assemble(self.block_tree, self.tree.points, params, self.mode)
        F = h_ldl(H) if self.form == "ldl" else h_cholesky(H)
        logdet = log_det(F)  # raises on an indefinite LDL factor
        v = solve_lower(F, self.z)
        quad = float(np.dot(v, v / F.D)) if F.form == "ldl" else float(np.dot(v, v))
        n = self.n
        ll = -0.5 * n * LOG_2PI - 0.5 * logdet - 0.5 * quad
        return LogLikResult(ll, logdet, quad, n, time.perf_counter() - t0, F.status)


def evaluate(locations, z, params: MaternParams, eps: float = 1e-6, form: str = "ldl",
             rank: int | None = None, eta: float = DEFAULT_ETA,
             leaf_size: int = DEFAULT_LEAF_SIZE) -> LogLikResult:
    """L(theta) = -n/2 log(2 pi) - 1/2 log det C - 1/2 z^T C^{-1} z, with C ~ H-matrix."""
    return LikelihoodModel(locations, z, eps, rank, form, eta, leaf_size)(params)
