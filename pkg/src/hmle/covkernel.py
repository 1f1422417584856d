"""Matérn covariance with an in-house modified Bessel function K_nu.

The Bessel routine combines Temme's series (x < 2) with Steed's continued
fraction (x >= 2) for orders in [-1/2, 1/2), followed by forward recurrence
in the order. All hot loops are compiled with numba so that the H-matrix
assembly can draw individual entries cheaply.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

__all__ = [
    "MaternParams",
    "ParameterError",
    "bessel_k",
    "matern",
    "cov_block",
    "cross_cov",
]

# Taylor coefficients of 1/Gamma(z) around z = 0 (coefficient of z**k at index k).
_RGAMMA_TAYLOR = np.array([
    0.0,
    1.0,
    0.5772156649015329,
    -0.6558780715202539,
    -0.04200263503409524,
    0.16653861138229148,
    -0.04219773455554433,
    -0.009621971527876973,
    0.0072189432466631,
    -0.0011651675918590652,
    -0.00021524167411495098,
    0.0001280502823881162,
    -2.013485478078824e-05,
    -1.2504934821426706e-06,
    1.133027231981696e-06,
    -2.056338416977607e-07,
    6.116095104481416e-09,
    5.002007644469223e-09,
    -1.18127457048702e-09,
    1.0434267116911005e-10,
    7.782263439905071e-12,
    -3.696805618642206e-12,
    5.100370287454476e-13,
    -2.0583260535665066e-14,
    -5.348122539423018e-15,
    1.2267786282382608e-15,
    -1.1812593016974588e-16,
    1.1866922547516004e-18,
    1.4123806553180319e-18,
])

_EPS = 1e-17
_MAXIT = 10000
_XSWITCH = 2.0
# Below this scaled distance the Matérn correlation is taken as exactly 1.
_TINY_SCALED = 1e-10
# Half-integer orders up to p + 1/2 with p <= _MAX_HALF use the polynomial closed form.
_MAX_HALF = 12


class ParameterError(ValueError):
    """Raised for covariance parameters outside their domain."""


@dataclass(frozen=True)
class MaternParams:
    """Matérn parameters, stored as variances.

    sigma2 is the partial sill, ell the range, nu the smoothness and tau2
    the nugget (added on the diagonal only).
    """

    sigma2: float
    ell: float
    nu: float
    tau2: float = 0.0

    def __post_init__(self):
        vals = (self.sigma2, self.ell, self.nu, self.tau2)
        if not all(math.isfinite(float(v)) for v in vals):
            raise ParameterError(f"non-finite Matérn parameters {vals}")
        if self.sigma2 <= 0 or self.ell <= 0 or self.nu <= 0 or self.tau2 < 0:
            raise ParameterError(
                f"invalid Matérn parameters: need sigma2>0, ell>0, nu>0, tau2>=0; got {vals}"
            )

    @property
    def sill(self) -> float:
        return self.sigma2 + self.tau2

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.sigma2, self.ell, self.nu, self.tau2)

    def as_string(self) -> str:
        """Round-trippable 'sigma2,ell,nu,tau2'."""
        return ",".join(repr(float(v)) for v in self.as_tuple())

    @classmethod
    def from_string(cls, text: str) -> "MaternParams":
        parts = [p for p in text.replace(" ", "").split(",") if p]
        if len(parts) != 4:
            raise ParameterError(f"expected 'sigma2,ell,nu,tau2', got {text!r}")
        return cls(*(float(p) for p in parts))


# ---------------------------------------------------------------------------
# compiled core
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _temme_gammas(mu):
    # gam1 = (1/G(1-mu) - 1/G(1+mu)) / (2 mu), gam2 = (1/G(1-mu) + 1/G(1+mu)) / 2
    c = _RGAMMA_TAYLOR
    gam1 = 0.0
    gam2 = 0.0
    gampl = 0.0
    gammi = 0.0
    mu2 = mu * mu
    pw = 1.0
    for k in range(2, c.shape[0], 2):
        gam1 -= c[k] * pw
        pw *= mu2
    pw = 1.0
    for k in range(1, c.shape[0], 2):
        gam2 += c[k] * pw
        pw *= mu2
    pw = 1.0
    for k in range(1, c.shape[0]):
        gampl += c[k] * pw
        gammi += c[k] * pw * (1.0 if (k - 1) % 2 == 0 else -1.0)
        pw *= mu
    return gam1, gam2, gampl, gammi


@numba.njit(cache=True)
def _bessel_k_pair(mu, x):
    """K_mu(x) and K_{mu+1}(x) for |mu| <= 1/2, x > 0."""
    if x < _XSWITCH:
        x2 = 0.5 * x
        pimu = math.pi * mu
        fact = 1.0 if abs(pimu) < 1e-15 else pimu / math.sin(pimu)
        d = -math.log(x2)
        e = mu * d
        fact2 = 1.0 if abs(e) < 1e-15 else math.sinh(e) / e
        gam1, gam2, gampl, gammi = _temme_gammas(mu)
        ff = fact * (gam1 * math.cosh(e) + gam2 * fact2 * d)
        s = ff
        e = math.exp(e)
        p = 0.5 * e / gampl
        q = 0.5 / (e * gammi)
        c = 1.0
        d = x2 * x2
        s1 = p
        mu2 = mu * mu
        for i in range(1, _MAXIT):
            fi = float(i)
            ff = (fi * ff + p + q) / (fi * fi - mu2)
            c *= d / fi
            p /= fi - mu
            q /= fi + mu
            delta = c * ff
            s += delta
            delta1 = c * (p - fi * ff)
            s1 += delta1
            if abs(delta) < abs(s) * _EPS:
                break
        return s, s1 * 2.0 / x
    # Steed's continued fraction CF2
    b = 2.0 * (1.0 + x)
    d = 1.0 / b
    h = d
    delh = d
    q1 = 0.0
    q2 = 1.0
    a1 = 0.25 - mu * mu
    q = a1
    c = a1
    a = -a1
    s = 1.0 + q * delh
    for i in range(2, _MAXIT):
        a -= 2.0 * (i - 1)
        c = -a * c / i
        qnew = (q1 - b * q2) / a
        q1 = q2
        q2 = qnew
        q += c * qnew
        b += 2.0
        d = 1.0 / (b + a * d)
        delh = (b * d - 1.0) * delh
        h += delh
        dels = q * delh
        s += dels
        if abs(dels / s) < _EPS:
            break
    h = a1 * h
    kmu = math.sqrt(math.pi / (2.0 * x)) * math.exp(-x) / s
    return kmu, kmu * (mu + x + 0.5 - h) / x


@numba.njit(cache=True)
def _bessel_k_scalar(nu, x):
    nl = int(nu + 0.5)
    mu = nu - nl
    kmu, k1 = _bessel_k_pair(mu, x)
    if nl == 0:
        return kmu
    xi2 = 2.0 / x
    for i in range(1, nl):
        ktmp = (mu + i) * xi2 * k1 + kmu
        kmu = k1
        k1 = ktmp
    return k1


@numba.njit(cache=True)
def _half_integer_poly(p, x):
    # exp(-x) * p!/(2p)! * sum_i (p+i)!/(i!(p-i)!) (2x)^(p-i)
    s = 0.0
    for i in range(p + 1):
        coef = math.exp(math.lgamma(p + i + 1) - math.lgamma(i + 1) - math.lgamma(p - i + 1))
        s += coef * (2.0 * x) ** (p - i)
    return s * math.exp(math.lgamma(p + 1) - math.lgamma(2 * p + 1) - x)


@numba.njit(cache=True)
def _matern_unit(x, nu, lognorm, half_p):
    """Matérn correlation at scaled distance x = h / ell (no nugget)."""
    if x < _TINY_SCALED:
        return 1.0
    if half_p >= 0:
        if half_p == 0:
            return math.exp(-x)
        if half_p == 1:
            return (1.0 + x) * math.exp(-x)
        if half_p == 2:
            return (1.0 + x + x * x / 3.0) * math.exp(-x)
        return _half_integer_poly(half_p, x)
    k = _bessel_k_scalar(nu, x)
    if k == 0.0:
        return 0.0
    return math.exp(lognorm + nu * math.log(x)) * k


@numba.njit(cache=True)
def _matern_vec(h, sigma2, ell, nu, lognorm, half_p):
    out = np.empty(h.shape[0])
    inv = 1.0 / ell
    for i in range(h.shape[0]):
        out[i] = sigma2 * _matern_unit(h[i] * inv, nu, lognorm, half_p)
    return out


@numba.njit(cache=True)
def _cov_points(pa, pb, sigma2, ell, nu, lognorm, half_p):
    m = pa.shape[0]
    n = pb.shape[0]
    d = pa.shape[1]
    out = np.empty((m, n))
    inv = 1.0 / ell
    for i in range(m):
        for j in range(n):
            s = 0.0
            for k in range(d):
                t = pa[i, k] - pb[j, k]
                s += t * t
            out[i, j] = sigma2 * _matern_unit(math.sqrt(s) * inv, nu, lognorm, half_p)
    return out


@numba.njit(cache=True)
def _bessel_k_vec(nu, x):
    out = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        out[i] = _bessel_k_scalar(nu, x[i])
    return out


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


def kernel_constants(nu: float, generic: bool = False) -> tuple[float, int]:
    """Return (log normalising constant, half-integer index or -1) for order nu.

    The normalising constant is log(1 / (2**(nu-1) Gamma(nu))).
    """
    lognorm = -((nu - 1.0) * math.log(2.0) + math.lgamma(nu))
    half_p = -1
    if not generic:
        p = nu - 0.5
        if p >= 0 and p == int(p) and p <= _MAX_HALF:
            half_p = int(p)
    return lognorm, half_p


def bessel_k(nu: float, x):
    """Modified Bessel function of the second kind K_nu(x).

    Accepts a scalar or array ``x``; returns the same shape. Requires
    ``nu > 0`` and ``x > 0``. Large arguments underflow to 0.
    """
    if not (nu > 0 and math.isfinite(nu)):
        raise ParameterError(f"bessel_k requires nu > 0, got {nu}")
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise ValueError("bessel_k domain error: x must be > 0")
    res = _bessel_k_vec(float(nu), np.ascontiguousarray(arr.ravel()))
    if arr.ndim == 0:
        return float(res[0])
    return res.reshape(arr.shape)


def matern(h, params: MaternParams, generic: bool = False):
    """Matérn covariance at distance ``h`` (scalar or array).

    h == 0 returns sigma2 + tau2; the nugget contributes nowhere else.
    With ``generic=True`` the Bessel path is used even for half-integer nu.
    """
    arr = np.asarray(h, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("matern: distance must be finite")
    if np.any(arr < 0):
        raise ValueError("matern: distance must be nonnegative")
    lognorm, half_p = kernel_constants(params.nu, generic)
    flat = np.ascontiguousarray(arr.ravel())
    out = _matern_vec(flat, params.sigma2, params.ell, params.nu, lognorm, half_p)
    out[flat == 0.0] += params.tau2
    if arr.ndim == 0:
        return float(out[0])
    return out.reshape(arr.shape)


def _points(locations) -> np.ndarray:
    pts = np.asarray(locations, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    return np.ascontiguousarray(pts)


def cross_cov(pa, pb, params: MaternParams, generic: bool = False) -> np.ndarray:
    """Covariance between two point sets, without any nugget term.

    Used for train/test blocks where coincident points are still distinct
    observations.
    """
    lognorm, half_p = kernel_constants(params.nu, generic)
    return _cov_points(_points(pa), _points(pb), params.sigma2, params.ell,
                       params.nu, lognorm, half_p)


def cov_block(rows, cols, locations, params: MaternParams) -> np.ndarray:
    """Block of the covariance matrix C(theta) for index lists ``rows`` x ``cols``.

    The nugget is added exactly where the row and column index coincide.
    """
    pts = _points(locations)
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    n = pts.shape[0]
    for idx in (rows, cols):
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise IndexError("cov_block: index out of range")
    block = cross_cov(pts[rows], pts[cols], params)
    if params.tau2 > 0:
        same = rows[:, None] == cols[None, :]
        block[same] += params.tau2
    return block
