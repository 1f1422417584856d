"""Synthetic datasets: exact Gaussian random field samples and Tukey g-and-h fields.

Random streams come from numpy's PCG64 generator seeded through a
SeedSequence. Standard normals are produced by inverting the normal CDF
(``scipy.special.ndtri``) on uniforms in the open interval (0, 1), so the
whole stream is fixed by the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky
from scipy.special import ndtri

from .covkernel import MaternParams
from .dataio import Dataset
from .hmatrix import exact_covariance

__all__ = [
    "TukeyParams",
    "tukey_gh",
    "standard_normals",
    "uniform_locations",
    "sample_grf",
    "generate_dataset",
    "SAMPLE_GUARD",
]

SAMPLE_GUARD = 16384
_G_LIMIT = 1e-10


@dataclass(frozen=True)
class TukeyParams:
    xi: float = 0.0
    omega: float = 1.0
    g: float = 0.0
    h: float = 0.0

    def __post_init__(self):
        for name in ("xi", "omega", "g", "h"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not self.omega > 0:
            raise ValueError("omega must be > 0")
        if self.h < 0:
            raise ValueError("h must be >= 0")

    @classmethod
    def from_string(cls, text: str) -> "TukeyParams":
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 4:
            raise ValueError(f"expected xi,omega,g,h, got {text!r}")
        return cls(*(float(p) for p in parts))


def tukey_gh(z, tp: TukeyParams) -> np.ndarray:
    """T = xi + omega * (exp(g z) - 1) / g * exp(h z^2 / 2), with the g -> 0 limit z exp(h z^2 / 2)."""
    z = np.asarray(z, dtype=float)
    if abs(tp.g) < _G_LIMIT:
        core = z
    else:
        core = np.expm1(tp.g * z) / tp.g
    return tp.xi + tp.omega * core * np.exp(0.5 * tp.h * z * z)


def standard_normals(rng: np.random.Generator, n: int) -> np.ndarray:
    # 53-bit uniforms shifted off zero so ndtri never sees 0 or 1
    u = (rng.integers(0, 1 << 53, size=n, dtype=np.int64) + 0.5) * (1.0 / (1 << 53))
    return ndtri(u)


def uniform_locations(n: int, seed=None, dim: int = 2) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    return np.random.default_rng(seed).random((n, dim))


def sample_grf(locations, params: MaternParams, seed=None) -> np.ndarray:
    """One exact realization Z = L w, C = L L^T dense, w iid N(0, 1)."""
    pts = np.asarray(locations, dtype=float)
    n = pts.shape[0]
    if n > SAMPLE_GUARD:
        raise ValueError(f"sample_grf refused: n = {n} exceeds dense guard {SAMPLE_GUARD}")
    C = exact_covariance(pts, params)
    try:
        L = cholesky(C, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("covariance not numerically SPD; increase nugget tau2") from exc
    w = standard_normals(np.random.default_rng(seed), n)
    return L @ w


def generate_dataset(n: int, params: MaternParams, seed: int, tukey: TukeyParams | None = None,
                     split: float = 0.9, name: str = "synthetic") -> Dataset:
    """Uniform locations on the unit square, an exact GRF sample, optional
    g-and-h transform, and a seeded train/test split."""
    if not 0.0 < split <= 1.0:
        raise ValueError("split must lie in (0, 1]")
    s_loc, s_field, s_split = np.random.SeedSequence(seed).spawn(3)
    pts = uniform_locations(n, s_loc)
    z = sample_grf(pts, params, s_field)
    if tukey is not None:
        z = tukey_gh(z, tukey)
    n_train = int(round(split * n))
    if n_train < 1:
        raise ValueError("split leaves no training points")
    order = np.random.default_rng(s_split).permutation(n)
    tr, te = np.sort(order[:n_train]), np.sort(order[n_train:])
    meta = {"name": name, "seed": str(seed), "params": params.as_string()}
    if tukey is not None:
        meta["tukey"] = f"{tukey.xi!r},{tukey.omega!r},{tukey.g!r},{tukey.h!r}"
    return Dataset(pts[tr], z[tr], pts[te], z[te], meta)
