"""Command-line interface: generate, fit, predict, evaluate, bench, tune-k.

Exit status is 0 on success, 1 for usage errors and 2 for runtime errors.
Outputs are written atomically; on failure any files already written by
the command are removed.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from .covkernel import MaternParams
from .dataio import (
    atomic_write_text,
    format_fit_report,
    read_fit_report,
    read_points,
    write_dataset,
    write_points,
)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _params(text: str) -> MaternParams:
    try:
        return MaternParams.from_string(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _sizes(text: str) -> list[int]:
    try:
        out = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad size list {text!r}") from None
    if not out or min(out) < 1:
        raise argparse.ArgumentTypeError("sizes must be positive integers")
    return out


def _krange(text: str) -> list[int]:
    """'1-20' or '1,3,5'."""
    try:
        if "-" in text:
            a, b = text.split("-", 1)
            return list(range(int(a), int(b) + 1))
        return [int(s) for s in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad k list {text!r}") from None


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hmle", description="H-matrix Gaussian process estimation and prediction")
    p.add_argument("--threads", type=int, default=None, help="cap BLAS/LAPACK worker threads")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def hopts(sp):
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--eps", type=_positive, default=1e-6, help="H-matrix accuracy (default 1e-6)")
        g.add_argument("--rank", type=int, default=None, help="fixed ACA rank (overrides --eps)")
        sp.add_argument("--eta", type=_positive, default=2.0, help="admissibility parameter")
        sp.add_argument("--leaf-size", type=int, default=32)

    g = sub.add_parser("generate", help="synthetic dataset (exact GRF sample)")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--params", type=_params, required=True, metavar="SIGMA2,ELL,NU,TAU2")
    g.add_argument("--tukey", default=None, metavar="XI,OMEGA,G,H")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--split", type=float, default=0.9)
    g.add_argument("--name", default="synthetic")
    g.add_argument("--out", required=True, help="output prefix: writes PREFIX.train.csv, .test.csv, .meta.txt")

    f = sub.add_parser("fit", help="maximum likelihood estimate of (sigma2, ell, nu, tau2)")
    f.add_argument("--train", required=True)
    hopts(f)
    f.add_argument("--init", default=None, metavar="S0,L0,N0,T0", help="initial reparameterized point")
    f.add_argument("--threshold", type=_positive, default=1e-4)
    f.add_argument("--max-iters", type=int, default=400)
    f.add_argument("--xtol", type=_positive, default=1e-3)
    f.add_argument("--out", required=True)

    pr = sub.add_parser("predict", help="predict values at test locations")
    pr.add_argument("--train", required=True)
    pr.add_argument("--test", required=True)
    pr.add_argument("--method", choices=("hmle", "knn"), default="hmle")
    src = pr.add_mutually_exclusive_group()
    src.add_argument("--params", type=_params, default=None, metavar="SIGMA2,ELL,NU,TAU2")
    src.add_argument("--report", default=None, help="fit report supplying the parameters")
    pr.add_argument("--k", type=int, default=None)
    hopts(pr)
    pr.add_argument("--svg", default=None, help="also write a scatter overlay figure")
    pr.add_argument("--out", required=True)

    e = sub.add_parser("evaluate", help="RMSE and optionally MLOE/MMOM")
    e.add_argument("--pred", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--mloe", action="store_true")
    e.add_argument("--theta-true", type=_params, default=None)
    e.add_argument("--theta-approx", type=_params, default=None)
    e.add_argument("--locations", default=None, help="locations for MLOE/MMOM (default: the truth file)")
    e.add_argument("--M", type=int, default=1000)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)

    b = sub.add_parser("bench", help="assembly/factorization timing over problem sizes")
    b.add_argument("--sizes", type=_sizes, default=[1024, 2048, 4096, 8192])
    hopts(b)
    b.add_argument("--params", type=_params, default=MaternParams(1.0, 0.1, 0.5, 1e-4))
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--dense-max", type=int, default=4096, help="largest n with a dense log-det check")
    b.add_argument("--plot", default=None, help="write a log-log scaling figure")
    b.add_argument("--out", required=True)

    t = sub.add_parser("tune-k", help="cross-validate the kNN neighbour count")
    t.add_argument("--train", required=True)
    t.add_argument("--ks", type=_krange, default=list(range(1, 21)))
    t.add_argument("--splits", type=int, default=100)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    return p


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def _csv(header: list[str], rows) -> str:
    return ",".join(header) + "\n" + "".join(",".join(_fmt(v) for v in r) + "\n" for r in rows)


def cmd_generate(a, written):
    from .simgen import TukeyParams, generate_dataset

    if a.n < 1:
        raise UsageError("--n must be >= 1")
    tukey = TukeyParams.from_string(a.tukey) if a.tukey else None
    ds = generate_dataset(a.n, a.params, a.seed, tukey, a.split, a.name)
    write_dataset(ds, a.out, written)
    print(f"wrote {ds.n_train} training and {ds.n_test} test points to {a.out}.*", file=sys.stderr)


def cmd_fit(a, written):
    from .mle import OptimizerConfig, ReparamPoint, fit

    locs, z = read_points(a.train)
    if locs.shape[0] == 0:
        raise ValueError(f"{a.train}: empty dataset")
    kw = {}
    if a.init:
        kw["initial"] = ReparamPoint.from_string(a.init)
    cfg = OptimizerConfig(threshold=a.threshold, max_iters=a.max_iters, xtol=a.xtol, eps=a.eps, rank=a.rank,
                          eta=a.eta, leaf_size=a.leaf_size, **kw)
    rep = fit(locs, z, cfg)
    extra = {"n": locs.shape[0], "eps": a.eps if a.rank is None else "", "rank": a.rank or "",
             "eta": a.eta, "leaf_size": a.leaf_size, "threshold": a.threshold, "max_iters": a.max_iters}
    atomic_write_text(a.out, format_fit_report(rep, extra))
    written.append(Path(a.out))
    print(f"fit: {rep.theta_hat.as_string()} loglik {rep.loglik_at_opt:.6f} "
          f"({rep.iterations} line searches, {rep.n_evals} evaluations, {rep.wall_time:.1f} s)", file=sys.stderr)


def cmd_predict(a, written):
    train_locs, train_z = read_points(a.train)
    test_locs, _ = read_points(a.test, require_value=False)
    if train_locs.shape[0] == 0:
        raise ValueError(f"{a.train}: empty dataset")
    t0 = time.perf_counter()
    if a.method == "knn":
        from .knn import knn_predict

        if a.k is None:
            raise UsageError("--method knn requires --k")
        z_hat = knn_predict(train_locs, train_z, test_locs, a.k) if test_locs.shape[0] else np.empty(0)
    else:
        from .krige import predict

        if a.report:
            params = read_fit_report(a.report)["params"]
        elif a.params is not None:
            params = a.params
        else:
            raise UsageError("--method hmle requires --params or --report")
        z_hat = predict(train_locs, train_z, test_locs, params, eps=a.eps, rank=a.rank, eta=a.eta,
                        leaf_size=a.leaf_size).z2_hat
    write_points(a.out, test_locs, z_hat, value_column="z_hat")
    written.append(Path(a.out))
    if a.svg:
        from .plotting import scatter_overlay

        scatter_overlay(train_locs, test_locs, a.svg, title=f"{a.method} prediction")
        written.append(Path(a.svg))
    print(f"predicted {z_hat.size} values in {time.perf_counter() - t0:.2f} s", file=sys.stderr)


def cmd_evaluate(a, written):
    from .metrics import MetricConfig, mloe_mmom, rmse

    pl, zp = read_points(a.pred, value_column="z_hat")
    tl, zt = read_points(a.truth)
    if pl.shape != tl.shape or not np.array_equal(pl, tl):
        raise ValueError("prediction and truth files list different locations")
    r = rmse(zp, zt)
    mloe = mmom = m_used = None
    if a.mloe:
        if a.theta_true is None or a.theta_approx is None:
            raise UsageError("--mloe requires --theta-true and --theta-approx")
        locs = read_points(a.locations, require_value=False)[0] if a.locations else tl
        cfg = MetricConfig(M=a.M, seed=a.seed)
        mloe, mmom = mloe_mmom(locs, a.theta_true, a.theta_approx, cfg)
        m_used = min(a.M, locs.shape[0])
    atomic_write_text(a.out, _csv(["rmse", "mloe", "mmom", "n_t", "M"], [[r, mloe, mmom, zt.size, m_used]]))
    written.append(Path(a.out))


def cmd_bench(a, written):
    from threadpoolctl import threadpool_info

    from .hfactor import h_cholesky, log_det
    from .hmatrix import FixedAccuracy, FixedRank, assemble, exact_covariance, storage_bytes
    from .geometry import build_block_tree, build_cluster_tree
    from .simgen import uniform_locations

    threads = max((i.get("num_threads", 1) for i in threadpool_info()), default=1)
    mode = FixedRank(a.rank) if a.rank else FixedAccuracy(a.eps)
    rows = []
    for n in a.sizes:
        pts = uniform_locations(n, np.random.SeedSequence([a.seed, n]))
        tree = build_cluster_tree(pts, a.leaf_size)
        bt = build_block_tree(tree, tree, a.eta)
        t0 = time.perf_counter()
        H = assemble(bt, pts, a.params, mode)
        t1 = time.perf_counter()
        F = h_cholesky(H)
        t2 = time.perf_counter()
        nbytes, _ = storage_bytes(H)
        err = None
        if n <= a.dense_max:
            ref = np.linalg.slogdet(exact_covariance(pts, a.params))[1]
            err = abs(log_det(F) - ref) / abs(ref)
        rows.append([n, t1 - t0, t2 - t1, nbytes, err, threads])
        print(f"n={n}: assemble {t1 - t0:.3f} s, factor {t2 - t1:.3f} s, {nbytes} bytes", file=sys.stderr)
    atomic_write_text(a.out, _csv(["n", "assemble_s", "factor_s", "bytes", "logdet_err", "threads"], rows))
    written.append(Path(a.out))
    if a.plot:
        from .plotting import scaling_plot

        arr = np.array([[r[0], r[1] + r[2], r[3]] for r in rows], dtype=float)
        scaling_plot(arr[:, 0], {"assemble + factor (s)": arr[:, 1], "storage (MB)": arr[:, 2] / 1e6}, a.plot,
                     ylabel="seconds / MB")
        written.append(Path(a.plot))


def cmd_tune_k(a, written):
    from .knn import select_k

    locs, z = read_points(a.train)
    sel = select_k(locs, z, a.ks, a.splits, a.seed)
    rows = [[k, sel.cv_rmse[k], int(k == sel.k)] for k in sorted(sel.cv_rmse)]
    atomic_write_text(a.out, _csv(["k", "cv_rmse", "selected"], rows))
    written.append(Path(a.out))
    print(f"selected k = {sel.k} (cv rmse {sel.cv_rmse[sel.k]:.6g}, mean predictor {sel.mean_rmse:.6g})",
          file=sys.stderr)


COMMANDS = {
    "generate": cmd_generate,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "bench": cmd_bench,
    "tune-k": cmd_tune_k,
}


def _cleanup(paths):
    for p in paths:
        try:
            os.unlink(p)
        except FileNotFoundError:
            pass


def main(argv=None) -> int:
    written: list[Path] = []
    try:
        a = build_parser().parse_args(argv)
        if a.threads is not None and a.threads < 1:
            raise UsageError("--threads must be >= 1")
        if a.threads is not None:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=a.threads):
                COMMANDS[a.command](a, written)
        else:
            COMMANDS[a.command](a, written)
    except UsageError as exc:
        _cleanup(written)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        _cleanup(written)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
