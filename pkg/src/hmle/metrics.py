"""Prediction error criteria: RMSE, MLOE and MMOM.

MLOE and MMOM compare kriging under an approximate parameter vector with
kriging under the true one. Each of the M sampled locations s_j is
predicted from the remaining n - 1 observations (leave-one-out). With
Q = C^{-1} the leave-one-out quantities need only column j of Q:

    E_t[(Zt_hat - Z)^2] = 1 / Qt_jj
    E_a[(Za_hat - Z)^2] = 1 / Qa_jj
    E_t[(Za_hat - Z)^2] = qa_j^T Ct qa_j / Qa_jj^2
                        = 1 / Qa_jj + qa_j^T (Ct - Ca) qa_j / Qa_jj^2

The last form is exact when Ct = Ca instead of relying on cancellation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .covkernel import MaternParams
from .hmatrix import exact_covariance

__all__ = ["rmse", "MetricConfig", "MetricReport", "mloe_mmom", "loo_expectations", "METRIC_GUARD"]

METRIC_GUARD = 4096


def rmse(z_hat, z_true) -> float:
    a = np.asarray(z_hat, dtype=float).ravel()
    b = np.asarray(z_true, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} predictions vs {b.size} true values")
    if a.size == 0:
        raise ValueError("rmse of empty input")
    return math.sqrt(float(np.mean((a - b) ** 2)))


@dataclass(frozen=True)
class MetricConfig:
    M: int = 1000
    seed: int = 0
    guard: int = METRIC_GUARD

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("M must be >= 1")


@dataclass(frozen=True)
class MetricReport:
    rmse: float
    mloe: float | None
    mmom: float | None
    n_t: int
    M: int | None


def _factor(C: np.ndarray, label: str):
    try:
        return cho_factor(C, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"{label} covariance is singular; increase nugget tau2") from exc


def sample_targets(n: int, config: MetricConfig) -> np.ndarray:
    """Sorted indices of min(M, n) locations drawn without replacement."""
    m = min(config.M, n)
    return np.sort(np.random.default_rng(config.seed).choice(n, size=m, replace=False))


def loo_expectations(locations, theta_true: MaternParams, theta_approx: MaternParams, targets):
    """Per-target (E_t[(Zt-Z)^2], E_t[(Za-Z)^2], E_a[(Za-Z)^2])."""
    pts = np.asarray(locations, dtype=float)
    n = pts.shape[0]
    targets = np.asarray(targets, dtype=int)
    if n < 2:
        raise ValueError("leave-one-out metrics need at least 2 locations")
    Ct = exact_covariance(pts, theta_true)
    Ca = exact_covariance(pts, theta_approx)
    E = np.zeros((n, targets.size))
    E[targets, np.arange(targets.size)] = 1.0
    Qt = cho_solve(_factor(Ct, "true-model"), E, check_finite=False)
    Qa = cho_solve(_factor(Ca, "approximate-model"), E, check_finite=False)
    qt = Qt[targets, np.arange(targets.size)]
    qa = Qa[targets, np.arange(targets.size)]
    delta = Ct - Ca
    extra = np.einsum("ij,ij->j", Qa, delta @ Qa)
    e_tt = 1.0 / qt
    e_aa = 1.0 / qa
    e_ta = e_aa + extra / (qa * qa)
    return e_tt, e_ta, e_aa


def mloe_mmom(locations, theta_true: MaternParams, theta_approx: MaternParams,
              config: MetricConfig | None = None) -> tuple[float, float]:
    """(MLOE, MMOM) averaged over the sampled leave-one-out targets."""
    config = config or MetricConfig()
    pts = np.asarray(locations, dtype=float)
    n = pts.shape[0]
    if n > config.guard:
        raise ValueError(f"MLOE/MMOM refused: n = {n} exceeds dense guard {config.guard}")
    targets = sample_targets(n, config)
    e_tt, e_ta, e_aa = loo_expectations(pts, theta_true, theta_approx, targets)
    mloe = float(np.mean(e_ta / e_tt - 1.0))
    mmom = float(np.mean(e_aa / e_ta - 1.0))
    return mloe, mmom
