"""Maximum likelihood fitting of Matérn parameters.

Parameters are searched in an unconstrained space,

    sigma = 2.0 / 1.1**s0,  ell = 1 / 1.5**l0,  nu = 1 / 1.2**n0,  tau = 1 / 2**t0,

by line searches, each a Brent-Dekker scalar maximization (parabolic
interpolation with golden-section fallback). The first sweep runs along
the coordinate axes in the order (sigma0, ell0, nu0, tau0); afterwards the
direction set is updated as in Powell's method, with the net displacement
of a sweep replacing the direction of largest gain.

Scaling the covariance by c changes L in closed form,

    L(c) = L(1) + q/2 - (n/2) log c - q / (2c),   q = z^T C^{-1} z,

so every evaluation also yields the best common factor for sigma^2 and
tau^2 (c = q/n) at no extra cost. With that scale profiled out the
sigma/ell ridge of Matérn likelihoods disappears, and pure coordinate
steps no longer crawl along it.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .covkernel import MaternParams
from .geometry import DEFAULT_ETA, DEFAULT_LEAF_SIZE
from .hfactor import FactorizationError, IndefiniteFactorError
from .loglik import LikelihoodModel

__all__ = [
    "ReparamPoint",
    "OptimizerConfig",
    "TraceEntry",
    "FitReport",
    "FitError",
    "reparam_to_params",
    "params_to_reparam",
    "brent_max_1d",
    "fit",
    "COORDINATES",
]

COORDINATES = ("sigma0", "ell0", "nu0", "tau0")
_LOG_BASE = {"sigma0": math.log(1.1), "ell0": math.log(1.5), "nu0": math.log(1.2), "tau0": math.log(2.0)}
_GOLD = 0.5 * (3.0 - math.sqrt(5.0))
# bracket half-width, in multiples of the sweep displacement, for pattern moves
PATTERN_HALF_WIDTH = 4.0


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class ReparamPoint:
    sigma0: float
    ell0: float
    nu0: float
    tau0: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.sigma0, self.ell0, self.nu0, self.tau0)

    def replace(self, coord: str, value: float) -> "ReparamPoint":
        vals = dict(zip(COORDINATES, self.as_tuple()))
        vals[coord] = float(value)
        return ReparamPoint(**vals)

    @classmethod
    def from_string(cls, text: str) -> "ReparamPoint":
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 4:
            raise ValueError(f"expected 4 comma-separated values, got {text!r}")
        return cls(*(float(p) for p in parts))


def reparam_to_params(p: ReparamPoint) -> MaternParams:
    """Map an unconstrained point to (sigma^2, ell, nu, tau^2)."""
    sigma = 2.0 * math.exp(-p.sigma0 * _LOG_BASE["sigma0"])
    ell = math.exp(-p.ell0 * _LOG_BASE["ell0"])
    nu = math.exp(-p.nu0 * _LOG_BASE["nu0"])
    tau = math.exp(-p.tau0 * _LOG_BASE["tau0"])
    return MaternParams(sigma * sigma, ell, nu, tau * tau)


def params_to_reparam(params: MaternParams) -> ReparamPoint:
    """Inverse of reparam_to_params; tau2 must be > 0."""
    if params.tau2 <= 0:
        raise ValueError("tau2 = 0 has no finite preimage (tau0 -> inf)")
    sigma = math.sqrt(params.sigma2)
    tau = math.sqrt(params.tau2)
    return ReparamPoint(
        -math.log(sigma / 2.0) / _LOG_BASE["sigma0"],
        -math.log(params.ell) / _LOG_BASE["ell0"],
        -math.log(params.nu) / _LOG_BASE["nu0"],
        -math.log(tau) / _LOG_BASE["tau0"],
    )


@dataclass
class OptimizerConfig:
    initial: ReparamPoint = field(default_factory=lambda: ReparamPoint(2.0, 2.0, 1.0, 15.0))
    threshold: float = 1e-4
    max_iters: int = 400
    half_widths: tuple[float, float, float, float] = (8.0, 8.0, 8.0, 8.0)
    max_expansions: int = 3
    xtol: float = 1e-3  # Brent tolerance in reparameterized units
    max_evals: int = 60  # per 1-D search
    eps: float = 1e-6
    rank: int | None = None
    eta: float = DEFAULT_ETA
    leaf_size: int = DEFAULT_LEAF_SIZE
    frozen: tuple[str, ...] = ()  # coordinates held fixed at the initial value
    pattern: bool = True  # Powell direction updates; False gives plain cyclic coordinate ascent
    profile_scale: bool = True  # maximize the common sigma2/tau2 scale in closed form at every probe

    def __post_init__(self):
        if not (self.threshold > 0):
            raise ValueError("threshold must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if len(self.half_widths) != 4 or min(self.half_widths) <= 0:
            raise ValueError("need four positive bracket half-widths")
        if not (self.xtol > 0):
            raise ValueError("xtol must be > 0")
        bad = set(self.frozen) - set(COORDINATES)
        if bad:
            raise ValueError(f"unknown coordinates {sorted(bad)}")


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    coordinate: str
    point: ReparamPoint
    loglik: float


@dataclass
class FitReport:
    theta_hat: MaternParams
    point_hat: ReparamPoint
    loglik_at_opt: float
    iterations: int
    n_evals: int
    converged: bool
    final_delta: float
    trace: list[TraceEntry]
    wall_time: float = 0.0


def brent_max_1d(f: Callable[[float], float], bracket: tuple[float, float], tol: float = 1e-8,
                 max_evals: int = 100, x0: float | None = None, f0: float | None = None):
    """Local maximizer of f on [lo, hi] by Brent's method.

    Non-finite values count as -inf. ``x0``/``f0`` seed the search with a
    known point (saves an evaluation and guarantees the result is no worse).
    Returns (x, f(x), number of evaluations).
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    if not lo < hi:
        raise ValueError("bracket must satisfy lo < hi")
    if max_evals < 1:
        raise ValueError("max_evals must be >= 1")
    n_evals = 0

    def g(x):
        nonlocal n_evals
        n_evals += 1
        y = f(x)
        return -y if np.isfinite(y) else math.inf

    a, b = lo, hi
    if x0 is not None and lo <= x0 <= hi:
        x = float(x0)
        if f0 is None:
            fx = g(x)
        else:
            fx = -f0 if np.isfinite(f0) else math.inf
    else:
        x = a + _GOLD * (b - a)
        fx = g(x)
    w = v = x
    fw = fv = fx
    d = e = 0.0
    while n_evals < max_evals:
        m = 0.5 * (a + b)
        tol1 = tol * abs(x) + tol
        tol2 = 2.0 * tol1
        if abs(x - m) <= tol2 - 0.5 * (b - a):
            break
        golden = True
        if abs(e) > tol1 and math.isfinite(fx) and math.isfinite(fw) and math.isfinite(fv):
            r = (x - w) * (fx - fv)
            q = (x - v) * (fx - fw)
            p = (x - v) * q - (x - w) * r
            q = 2.0 * (q - r)
            if q > 0.0:
                p = -p
            q = abs(q)
            etemp = e
            e = d
            if abs(p) < abs(0.5 * q * etemp) and p > q * (a - x) and p < q * (b - x):
                d = p / q
                u = x + d
                if u - a < tol2 or b - u < tol2:
                    d = tol1 if m >= x else -tol1
                golden = False
        if golden:
            e = (a - x) if x >= m else (b - x)
            d = _GOLD * e
        u = x + (d if abs(d) >= tol1 else (tol1 if d > 0 else -tol1))
        fu = g(u)
        if fu <= fx:
            if u >= x:
                a = x
            else:
                b = x
            v, fv = w, fw
            w, fw = x, fx
            x, fx = u, fu
        else:
            if u < x:
                a = u
            else:
                b = u
            if fu <= fw or w == x:
                v, fv = w, fw
                w, fw = u, fu
            elif fu <= fv or v == x or v == w:
                v, fv = u, fu
    if not math.isfinite(fx):
        raise FitError("likelihood undefined on bracket")
    return x, -fx, n_evals


def _safe_loglik(model, params: MaternParams):
    """The LogLikResult, or -inf where the factorization breaks down."""
    try:
        return model(params)
    except (FactorizationError, IndefiniteFactorError, FloatingPointError):
        return -math.inf


def fit(locations, z, config: OptimizerConfig | None = None, loglik: Callable | None = None) -> FitReport:
    """Maximize the log-likelihood over (sigma0, ell0, nu0, tau0).

    ``loglik`` maps MaternParams to either a float or a result with
    ``loglik``, ``quad_form`` and ``n`` attributes (a LogLikResult); by
    default the H-matrix likelihood of (locations, z) at the configured
    accuracy. With a result object the common scale of sigma2 and tau2 is
    profiled out at every probe (see ``profile_scale``).
    """
    config = config or OptimizerConfig()
    t_start = time.perf_counter()
    if loglik is None:
        model = LikelihoodModel(locations, z, config.eps, config.rank, "ldl", config.eta, config.leaf_size)
        loglik = lambda p: _safe_loglik(model, p)  # noqa: E731

    active = [c for c in COORDINATES if c not in config.frozen]
    if not active:
        raise ValueError("all coordinates frozen")
    profile = config.profile_scale and "sigma0" in active and "tau0" in active
    # cache: point -> (value, point the value belongs to after profiling)
    cache: dict[tuple, tuple[float, ReparamPoint]] = {}
    n_calls = 0

    def direct(params: MaternParams):
        nonlocal n_calls
        n_calls += 1
        out = loglik(params)
        if hasattr(out, "loglik"):
            return float(out.loglik), getattr(out, "quad_form", None), getattr(out, "n", None)
        return float(out), None, None

    def probe(point: ReparamPoint) -> tuple[float, ReparamPoint]:
        key = point.as_tuple()
        if key not in cache:
            try:
                y, q, n = direct(reparam_to_params(point))
            except (ValueError, OverflowError):
                y, q, n = -math.inf, None, None
            if not np.isfinite(y):
                cache[key] = (-math.inf, point)
            elif profile and q is not None and q > 0 and n:
                cache[key] = _profile_scale(point, y, q, n)
            else:
                cache[key] = (y, point)
        return cache[key]

    def value(point: ReparamPoint) -> float:
        return probe(point)[0]

    best, current = probe(config.initial)
    trace = [TraceEntry(0, "init", current, best)]
    iterations = 0
    converged = False
    delta = math.inf
    # search directions: unit vectors of the active coordinates, later
    # updated Powell-style with the net displacement of each sweep
    dirs = []
    for ci, coord in enumerate(COORDINATES):
        # with the scale profiled out, tau0 alone already moves the noise ratio
        if coord in active and not (profile and coord == "sigma0"):
            u = np.zeros(4)
            u[ci] = 1.0
            dirs.append((coord, u, config.half_widths[ci]))

    def along(origin, u):
        return lambda t: value(ReparamPoint(*(origin + t * u)))

    while iterations < config.max_iters:
        sweep_start, sweep_point = best, np.asarray(current.as_tuple())
        biggest, ibig = 0.0, 0
        for i, (label, u, half) in enumerate(dirs):
            if iterations >= config.max_iters:
                break
            iterations += 1
            origin = np.asarray(current.as_tuple())
            before = best
            t, ft = _bracketed_max(along(origin, u), 0.0, best, half, config, tol=config.xtol / np.max(np.abs(u)))
            if ft > best:
                best, current = probe(ReparamPoint(*(origin + t * u)))
            if best - before > biggest:
                biggest, ibig = best - before, i
            trace.append(TraceEntry(iterations, label, current, best))
        here = np.asarray(current.as_tuple())
        step = here - sweep_point
        if config.pattern and len(dirs) > 1 and iterations < config.max_iters and np.any(step):
            f_ext = value(ReparamPoint(*(here + step)))
            # Powell's test for replacing the direction of largest gain
            if f_ext > sweep_start:
                fp, fr, fe = -sweep_start, -best, -f_ext
                crit = 2.0 * (fp - 2.0 * fr + fe) * (fp - fr - biggest) ** 2 - biggest * (fp - fe) ** 2
                if crit < 0.0:
                    iterations += 1
                    t, ft = _bracketed_max(along(here, step), 0.0, best, PATTERN_HALF_WIDTH, config,
                                           tol=config.xtol / np.max(np.abs(step)))
                    if ft > best:
                        best, current = probe(ReparamPoint(*(here + t * step)))
                    trace.append(TraceEntry(iterations, "pattern", current, best))
                    dirs[ibig] = dirs[-1]
                    dirs[-1] = ("pattern", step, PATTERN_HALF_WIDTH)
        delta = best - sweep_start
        if delta < config.threshold:
            converged = True
            break
    if not math.isfinite(best):
        raise FitError("likelihood undefined at every probe")
    theta_hat = reparam_to_params(current)
    if profile:
        # the profiled value is a closed form; report a direct evaluation
        final = direct(theta_hat)[0]
        if math.isfinite(final):
            best = final
    return FitReport(
        theta_hat=theta_hat,
        point_hat=current,
        loglik_at_opt=best,
        iterations=iterations,
        n_evals=n_calls,
        converged=converged,
        final_delta=delta,
        trace=trace,
        wall_time=time.perf_counter() - t_start,
    )


def _profile_scale(point: ReparamPoint, y: float, q: float, n: int) -> tuple[float, ReparamPoint]:
    """Best common rescaling of sigma2 and tau2 from one evaluation.

    For C -> c C the log-likelihood is y + q/2 - (n/2) log c - q/(2c),
    maximal at c = q/n. Returns that maximum and the rescaled point.
    """
    ratio = q / n
    gain = 0.5 * (q - n) - 0.5 * n * math.log(ratio)
    shift = 0.5 * math.log(ratio)
    moved = ReparamPoint(point.sigma0 - shift / _LOG_BASE["sigma0"], point.ell0, point.nu0,
                         point.tau0 - shift / _LOG_BASE["tau0"])
    return y + max(gain, 0.0), moved


def _bracketed_max(f, x0, f0, half, config, tol=None):
    """Brent search on [x0 - half, x0 + half], re-centred with a doubled
    half-width (up to ``max_expansions`` times) while the maximizer sits on
    the bracket edge with a strict improvement. Never returns a value below
    ``f0``."""
    tol = config.xtol if tol is None else tol
    x_best, f_best = x0, f0
    center = x0
    for _ in range(config.max_expansions + 1):
        lo, hi = center - half, center + half
        seeded = math.isfinite(f_best)
        try:
            x, fx, _ = brent_max_1d(f, (lo, hi), tol=tol, max_evals=config.max_evals,
                                    x0=x_best if seeded else None, f0=f_best if seeded else None)
        except FitError:
            return x_best, f_best
        if not fx > f_best:
            break  # nothing better inside, so nothing to chase past the edge
        x_best, f_best = x, fx
        if min(x - lo, hi - x) > 10.0 * tol * (1.0 + abs(x)):
            break
        center, half = x, 2.0 * half
    return x_best, f_best
