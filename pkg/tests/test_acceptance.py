"""Acceptance criteria 1-11, one test per criterion.

Each test records a one-line verdict; ``conftest.py`` prints them in the
terminal summary, and running this file as a script prints them directly.
Tolerances are the stated ones and are not relaxed here.
"""

import functools
import math
import time

import numpy as np
import pytest

from hmle.covkernel import MaternParams, cross_cov, matern
from hmle.geometry import build_block_tree, build_cluster_tree
from hmle.hfactor import h_cholesky
from hmle.hmatrix import FixedAccuracy, assemble, assemble_covariance, exact_covariance, storage_bytes, to_dense
from hmle.knn import knn_predict, select_k
from hmle.krige import predict
from hmle.loglik import LikelihoodModel, evaluate
from hmle.metrics import MetricConfig, mloe_mmom, rmse, sample_targets
from hmle.mle import fit
from hmle.simgen import TukeyParams, generate_dataset, tukey_gh, uniform_locations

RESULTS: dict[int, tuple[bool, str]] = {}


def criterion(num, title):
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                detail = fn(*args, **kwargs)
            except BaseException as exc:
                RESULTS[num] = (False, f"{title}: {type(exc).__name__}: {exc}".splitlines()[0])
                raise
            RESULTS[num] = (True, f"{title}: {detail}")
        return run
    return wrap


def verdict_lines():
    out = []
    for num in range(1, 12):
        if num in RESULTS:
            ok, detail = RESULTS[num]
            out.append(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            out.append(f"criterion {num:2d}: NOT RUN")
    return out


def dense_loglik(pts, z, p):
    C = exact_covariance(pts, p)
    L = np.linalg.cholesky(C)
    v = np.linalg.solve(L, z)
    return -0.5 * len(z) * math.log(2 * math.pi) - np.log(np.diag(L)).sum() - 0.5 * v @ v


def rel_fro(A, B):
    return np.linalg.norm(A - B) / np.linalg.norm(B)


def slope(x, y):
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


@criterion(1, "Matern generic path vs closed forms")
def test_c01_matern_closed_forms():
    r = np.geomspace(1e-6, 50, 10_000)
    matern(r[:3], MaternParams(1.0, 1.0, 0.7), generic=True)  # compile outside the timed region
    closed = {0.5: np.exp(-r), 1.5: (1 + r) * np.exp(-r), 2.5: (1 + r + r * r / 3) * np.exp(-r)}
    t0 = time.perf_counter()
    worst = max(float(np.max(np.abs(matern(r, MaternParams(1.0, 1.0, nu), generic=True) - ref) / ref))
                for nu, ref in closed.items())
    elapsed = time.perf_counter() - t0
    assert worst <= 1e-12, worst
    assert elapsed < 1.0, elapsed
    return f"max rel err {worst:.2e} (<= 1e-12), {elapsed:.3f} s (< 1 s)"


@criterion(2, "H-approximation accuracy at n=2048, eps=1e-6")
def test_c02_hmatrix_accuracy():
    pts = uniform_locations(2048, 2)
    t0 = time.perf_counter()
    errs = []
    for ell in (0.03, 0.2):
        for nu in (0.6, 1.5):
            p = MaternParams(1.0, ell, nu, 0.0)
            errs.append(rel_fro(to_dense(assemble_covariance(pts, p, FixedAccuracy(1e-6))), exact_covariance(pts, p)))
    elapsed = time.perf_counter() - t0
    assert max(errs) <= 1e-5, errs
    assert elapsed < 60, elapsed
    return f"max rel Frobenius err {max(errs):.2e} (<= 1e-5) over 4 sets, {elapsed:.1f} s (< 60 s)"


@criterion(3, "log-determinant at n=2048, eps=1e-6, tau2=1e-4")
def test_c03_logdet():
    pts = uniform_locations(2048, 3)
    p = MaternParams(1.0, 0.1, 1.0, 1e-4)
    t0 = time.perf_counter()
    ld = evaluate(pts, np.zeros(2048), p).logdet
    elapsed = time.perf_counter() - t0
    ref = np.linalg.slogdet(exact_covariance(pts, p))[1]
    err = abs(ld - ref) / abs(ref)
    assert err <= 1e-4, err
    assert elapsed < 30, elapsed
    return f"rel err {err:.2e} (<= 1e-4), {elapsed:.1f} s (< 30 s)"


@criterion(4, "log-likelihood vs dense at n=1024, 5 random theta, eps=1e-9")
def test_c04_loglik():
    # Small nuggets with long ranges give cond(C) up to ~1e9 here, and the block
    # truncation error is amplified by it, so the pipeline runs at eps = 1e-9.
    # The default eps = 1e-6 figure is reported alongside.
    ds = generate_dataset(1024, MaternParams(1.0, 0.1, 1.0, 1e-4), seed=4, split=1.0)
    rng = np.random.default_rng(44)
    model = LikelihoodModel(ds.train_locations, ds.train_z, eps=1e-9)
    coarse = LikelihoodModel(ds.train_locations, ds.train_z, eps=1e-6)
    errs, errs_coarse = [], []
    for _ in range(5):
        p = MaternParams(rng.uniform(0.5, 2.0), rng.uniform(0.03, 0.3), rng.uniform(0.5, 2.0),
                         10 ** rng.uniform(-6, -2))
        ref = dense_loglik(ds.train_locations, ds.train_z, p)
        errs.append(abs(model(p).loglik - ref) / abs(ref))
        errs_coarse.append(abs(coarse(p).loglik - ref) / abs(ref))
    assert max(errs) <= 1e-4, errs
    return f"max rel err {max(errs):.2e} (<= 1e-4) at eps 1e-9; {max(errs_coarse):.1e} at eps 1e-6"


@criterion(5, "quasi-linear scaling over n=1024..8192, eps=1e-4")
def test_c05_scaling():
    sizes = [1024, 2048, 4096, 8192]
    p = MaternParams(1.0, 0.1, 0.5, 1e-4)
    t_start = time.perf_counter()
    times, mem = [], []
    for n in sizes:
        pts = uniform_locations(n, np.random.SeedSequence([5, n]))
        tree = build_cluster_tree(pts)
        bt = build_block_tree(tree, tree)
        best = math.inf
        for _ in range(5 if n < 8192 else 3):
            t0 = time.perf_counter()
            H = assemble(bt, pts, p, FixedAccuracy(1e-4))
            h_cholesky(H)
            best = min(best, time.perf_counter() - t0)
        times.append(best)
        mem.append(storage_bytes(H)[0])
    elapsed = time.perf_counter() - t_start
    ts, ms = slope(sizes, times), slope(sizes, mem)
    assert ts < 1.6, (ts, times)
    assert ms < 1.35, (ms, mem)
    assert elapsed < 600, elapsed
    return f"time exponent {ts:.2f} (< 1.6), memory exponent {ms:.2f} (< 1.35), {elapsed:.0f} s (< 600 s)"


@criterion(6, "MLE at n=2048, theta_true=(1.5, 0.0632, 1.5, 0)")
def test_c06_mle():
    truth = MaternParams(1.5, 0.0632, 1.5, 0.0)
    ds = generate_dataset(2048, truth, seed=2024, split=1.0)
    t0 = time.perf_counter()
    rep = fit(ds.train_locations, ds.train_z)
    elapsed = time.perf_counter() - t0
    model = LikelihoodModel(ds.train_locations, ds.train_z)
    l_hat, l_true = model(rep.theta_hat).loglik, model(truth).loglik
    e_s2 = abs(rep.theta_hat.sigma2 - truth.sigma2) / truth.sigma2
    e_ell = abs(rep.theta_hat.ell - truth.ell) / truth.ell
    lls = [t.loglik for t in rep.trace]
    assert all(b >= a for a, b in zip(lls, lls[1:]))
    assert l_hat >= l_true - 1e-3, (l_hat, l_true)
    assert rep.iterations <= 400, rep.iterations
    assert e_s2 <= 0.5 and e_ell <= 0.5, (e_s2, e_ell)
    assert elapsed < 900, elapsed
    return (f"L(hat)-L(true) = {l_hat - l_true:+.3f} (>= -1e-3), {rep.iterations} line searches (<= 400), "
            f"sigma2 err {e_s2:.0%}, ell err {e_ell:.0%} (<= 50%), {elapsed:.0f} s (< 900 s)")


@criterion(7, "kriging vs dense at n=1024+128; interpolation with tau2=0")
def test_c07_kriging():
    p = MaternParams(1.0, 0.1, 1.0, 1e-4)
    ds = generate_dataset(1152, p, seed=7, split=1024 / 1152)
    got = predict(ds.train_locations, ds.train_z, ds.test_locations, p).z2_hat
    C = exact_covariance(ds.train_locations, p)
    ref = cross_cov(ds.test_locations, ds.train_locations, p) @ np.linalg.solve(C, ds.train_z)
    err = np.linalg.norm(got - ref) / np.linalg.norm(ref)
    assert err <= 1e-4, err
    p0 = MaternParams(1.0, 0.1, 0.5, 0.0)
    d0 = generate_dataset(1024, p0, seed=8, split=1.0)
    back = predict(d0.train_locations, d0.train_z, d0.train_locations, p0, eps=1e-10).z2_hat
    interp = float(np.max(np.abs(back - d0.train_z)))
    assert interp <= 1e-8, interp
    return f"rel err {err:.2e} (<= 1e-4), interpolation max err {interp:.1e} (<= 1e-8, eps 1e-10)"


@criterion(8, "metrics: equal-theta zero, MMOM vs Monte Carlo, RMSE hand cases")
def test_c08_metrics():
    tt = MaternParams(1.5, 0.1, 0.5, 0.0)
    ta = MaternParams(1.0, 0.1, 0.5, 0.0)
    X = uniform_locations(64, 8)
    z0 = mloe_mmom(X, tt, tt, MetricConfig(M=64))
    assert max(map(abs, z0)) <= 1e-8, z0
    cfg = MetricConfig(M=64)
    targets = sample_targets(64, cfg)
    _, mmom = mloe_mmom(X, tt, ta, cfg)
    # Monte Carlo oracle: explicit leave-one-out weights, 1e5 replicates per model
    rng = np.random.default_rng(80)
    Ct, Ca = exact_covariance(X, tt), exact_covariance(X, ta)
    Zt = rng.standard_normal((100_000, 64)) @ np.linalg.cholesky(Ct).T
    Za = rng.standard_normal((100_000, 64)) @ np.linalg.cholesky(Ca).T
    ratios = []
    for j in targets:
        others = np.delete(np.arange(64), j)
        w = np.linalg.solve(Ca[np.ix_(others, others)], Ca[others, j])
        e_ta = np.mean((Zt[:, others] @ w - Zt[:, j]) ** 2)
        e_aa = np.mean((Za[:, others] @ w - Za[:, j]) ** 2)
        ratios.append(e_aa / e_ta - 1)
    mc = float(np.mean(ratios))
    assert abs(mmom - mc) < 5e-4, (mmom, mc)  # agreement to 3 decimals
    assert rmse([1, 2, 3], [1, 2, 3]) == 0.0 and rmse([1, 1], [0, 0]) == 1.0
    assert rmse([1, 2, 3], [0, 0, 0]) == math.sqrt(14 / 3)
    return f"|MLOE|,|MMOM| <= {max(map(abs, z0)):.1e}; MMOM {mmom:.4f} vs Monte Carlo {mc:.4f}; RMSE cases exact"


@criterion(9, "kNN exactness and select_k improvement")
def test_c09_knn():
    for seed in range(5):
        rng = np.random.default_rng(900 + seed)
        X, z, Q = rng.random((2000, 2)), rng.standard_normal(2000), rng.random((200, 2))
        k = int(rng.integers(1, 21))
        ref = np.empty(200)
        for i, q in enumerate(Q):
            d2 = ((X - q) ** 2).sum(axis=1)
            idx = np.lexsort((np.arange(2000), d2))[:k]
            ref[i] = math.fsum(z[idx]) / k
        assert np.array_equal(knn_predict(X, z, Q, k), ref), seed
    ds = generate_dataset(2000, MaternParams(1.0, 0.3, 2.5, 0.0), seed=9, split=1.0)
    sel = select_k(ds.train_locations, ds.train_z)
    ratio = sel.cv_rmse[sel.k] / sel.mean_rmse
    assert 1 <= sel.k <= 20 and ratio < 0.9, (sel.k, ratio)
    return f"5/5 instances bit-equal to brute force; k* = {sel.k}, cv_rmse/mean_rmse = {ratio:.3f} (< 0.9)"


@criterion(10, "Tukey g-and-h: z=0, g->0 limit, monotonicity")
def test_c10_tukey():
    z = np.linspace(-5, 5, 2001)
    worst = 0.0
    for xi in (-1.0, 0.0, 1.0):
        for g in np.linspace(-1, 1, 9):
            for h in np.linspace(0, 0.5, 6):
                tp = TukeyParams(xi, 2.0, g, h)
                assert tukey_gh(0.0, tp) == xi
                assert np.all(np.diff(tukey_gh(z, tp)) > 0)
        for h in np.linspace(0, 0.5, 6):
            lim = tukey_gh(z, TukeyParams(xi, 2.0, 0.0, h))
            worst = max(worst, float(np.max(np.abs(tukey_gh(z, TukeyParams(xi, 2.0, 1e-12, h)) - lim))))
    assert worst <= 1e-9, worst
    return f"T(0) = xi exactly; |T(g=1e-12) - T_limit| <= {worst:.1e} (<= 1e-9); strictly increasing on the box"


@criterion(11, "end-to-end determinism of generate -> fit -> predict -> evaluate")
def test_c11_determinism(tmp_path):
    from hmle.cli import main

    def pipeline(d):
        d.mkdir()
        steps = [
            ["generate", "--n", "500", "--params", "1.5,0.0632,1.5,0", "--seed", "11", "--out", d / "ds"],
            ["fit", "--train", d / "ds.train.csv", "--out", d / "fit.txt"],
            ["predict", "--train", d / "ds.train.csv", "--test", d / "ds.test.csv", "--report", d / "fit.txt",
             "--svg", d / "pred.svg", "--out", d / "pred.csv"],
            ["predict", "--train", d / "ds.train.csv", "--test", d / "ds.test.csv", "--method", "knn", "--k", "3",
             "--out", d / "knn.csv"],
            ["evaluate", "--pred", d / "pred.csv", "--truth", d / "ds.test.csv", "--mloe",
             "--theta-true", "1.5,0.0632,1.5,0", "--theta-approx", "1.5,0.0632,1.5,0", "--out", d / "metrics.csv"],
        ]
        for argv in steps:
            assert main([str(a) for a in argv]) == 0, argv
        return {p.name: p.read_bytes() for p in sorted(d.iterdir())}

    a, b = pipeline(tmp_path / "a"), pipeline(tmp_path / "b")
    assert a.keys() == b.keys() and len(a) == 8
    same = [name for name in a if a[name] == b[name]]
    assert len(same) == len(a), sorted(set(a) - set(same))
    return f"{len(a)} artifacts byte-identical across two runs"


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
