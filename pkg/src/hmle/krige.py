"""Kriging prediction Z2 = C21 C11^{-1} Z1 through an H-matrix factorization."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, solve_triangular

from .covkernel import MaternParams, cross_cov
from .geometry import DEFAULT_ETA, DEFAULT_LEAF_SIZE
from .hfactor import IndefiniteFactorError, h_cholesky, h_ldl, solve_factored
from .hmatrix import FixedAccuracy, FixedRank, assemble_covariance, exact_covariance

__all__ = ["PredictionResult", "predict", "predict_with_factor", "kriging_weights", "kriging_variance_dense",
           "BATCH", "VARIANCE_GUARD"]

BATCH = 1024
VARIANCE_GUARD = 4096


@dataclass
class PredictionResult:
    z2_hat: np.ndarray
    variance: np.ndarray | None = None
    timing: float = 0.0


def _as_points(x, name: str) -> np.ndarray:
    pts = np.asarray(x, dtype=float)
    if pts.ndim != 2:
        raise ValueError(f"{name} must be an (m, d) array")
    if not np.all(np.isfinite(pts)):
        raise ValueError(f"invalid location in {name}: non-finite coordinate")
    return pts


def kriging_weights(train_locations, train_z, params: MaternParams, eps: float = 1e-6, rank: int | None = None,
                    form: str = "ldl", eta: float = DEFAULT_ETA, leaf_size: int = DEFAULT_LEAF_SIZE):
    """(w, factor) with w = C11^{-1} Z1 from the H-matrix factorization."""
    z1 = np.asarray(train_z, dtype=float).ravel()
    mode = FixedRank(rank) if rank is not None else FixedAccuracy(eps)
    H = assemble_covariance(train_locations, params, mode, eta, leaf_size)
    if z1.shape[0] != H.n:
        raise ValueError(f"dimension mismatch: {H.n} training locations, {z1.shape[0]} values")
    F = h_ldl(H) if form == "ldl" else h_cholesky(H)
    if F.negative_pivots:
        raise IndefiniteFactorError("indefinite factor; increase nugget tau2")
    return solve_factored(F, z1), F


def predict_with_factor(weights: np.ndarray, train_locations, new_locations, params: MaternParams,
                        batch: int = BATCH) -> np.ndarray:
    """C21 w, streaming C21 in row batches (C21 carries no nugget)."""
    train = _as_points(train_locations, "train locations")
    new = _as_points(new_locations, "new locations")
    out = np.empty(new.shape[0])
    for s in range(0, new.shape[0], batch):
        out[s:s + batch] = cross_cov(new[s:s + batch], train, params) @ weights
    return out


def predict(train_locations, train_z, new_locations, params: MaternParams, eps: float = 1e-6,
            rank: int | None = None, form: str = "ldl", eta: float = DEFAULT_ETA,
            leaf_size: int = DEFAULT_LEAF_SIZE, batch: int = BATCH, with_variance: bool = False) -> PredictionResult:
    t0 = time.perf_counter()
    train = _as_points(train_locations, "train locations")
    new = _as_points(new_locations, "new locations")
    if train.shape[0] == 0:
        raise ValueError("empty dataset")
    if new.shape[0] == 0:
        return PredictionResult(np.empty(0), np.empty(0) if with_variance else None, time.perf_counter() - t0)
    w, _ = kriging_weights(train, train_z, params, eps, rank, form, eta, leaf_size)
    z2 = predict_with_factor(w, train, new, params, batch)
    var = kriging_variance_dense(train, new, params) if with_variance else None
    return PredictionResult(z2, var, time.perf_counter() - t0)


def kriging_variance_dense(train_locations, new_locations, params: MaternParams) -> np.ndarray:
    """diag(C22 - C21 C11^{-1} C12) by dense Cholesky (n <= VARIANCE_GUARD)."""
    train = _as_points(train_locations, "train locations")
    new = _as_points(new_locations, "new locations")
    n = train.shape[0]
    if n > VARIANCE_GUARD:
        raise ValueError(f"kriging variance refused: n = {n} exceeds dense guard {VARIANCE_GUARD}")
    try:
        c, lower = cho_factor(exact_covariance(train, params), lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("covariance not numerically SPD; increase nugget tau2") from exc
    out = np.empty(new.shape[0])
    for s in range(0, new.shape[0], BATCH):
        c12 = cross_cov(train, new[s:s + BATCH], params)
        v = solve_triangular(c, c12, lower=lower, check_finite=False)
        out[s:s + BATCH] = params.sill - np.einsum("ij,ij->j", v, v)
    return np.clip(out, 0.0, params.sill)
