import math

import numpy as np
import pytest
from scipy.linalg import cho_factor, cho_solve

from hmle.covkernel import MaternParams
from hmle.hfactor import FactorizationError
from hmle.hmatrix import exact_covariance
from hmle.loglik import LikelihoodModel, evaluate
from hmle.simgen import generate_dataset


def dense_loglik(pts, z, p):
    C = exact_covariance(pts, p)
    c = cho_factor(C, lower=True)
    logdet = 2.0 * np.log(np.diag(c[0])).sum()
    return -0.5 * len(z) * math.log(2 * math.pi) - 0.5 * logdet - 0.5 * z @ cho_solve(c, z)


@pytest.fixture(scope="module")
def grf512():
    p = MaternParams(1.0, 0.1, 0.8, 1e-4)
    ds = generate_dataset(512, p, seed=11, split=1.0)
    return ds.train_locations, ds.train_z, p


def test_single_point_by_hand():
    r = evaluate([[0.3, 0.3]], [0.0], MaternParams(0.75, 0.1, 0.5, 0.25))
    assert r.loglik == pytest.approx(-0.5 * math.log(2 * math.pi), rel=1e-15)
    assert r.loglik == pytest.approx(-0.918938533, abs=1e-9)


def test_identity_covariance_by_hand():
    # points so far apart the exponential correlation underflows to zero
    r = evaluate([[0.0, 0.0], [1e3, 0.0]], [1.0, 1.0], MaternParams(1.0, 1.0, 0.5, 0.0))
    assert r.loglik == pytest.approx(-math.log(2 * math.pi) - 1, rel=1e-14)
    assert r.loglik == pytest.approx(-2.837877066, abs=1e-9)
    assert r.quad_form == pytest.approx(2.0) and r.logdet == pytest.approx(0.0, abs=1e-15)


def test_parts_identity(grf512):
    pts, z, p = grf512
    r = evaluate(pts, z, p)
    assert r.loglik == -0.5 * r.n * math.log(2 * math.pi) - 0.5 * r.logdet - 0.5 * r.quad_form
    assert r.quad_form >= 0 and r.factor_status == "success"


@pytest.mark.parametrize("form", ["ldl", "cholesky"])
def test_matches_dense_oracle(grf512, form):
    pts, z, p = grf512
    ref = dense_loglik(pts, z, p)
    assert abs(evaluate(pts, z, p, form=form).loglik - ref) / abs(ref) <= 1e-4


def test_accuracy_improves_with_eps():
    wins = 0
    for seed in range(5):
        p = MaternParams(1.0, 0.1, 1.2, 1e-3)
        ds = generate_dataset(512, p, seed=seed, split=1.0)
        ref = dense_loglik(ds.train_locations, ds.train_z, p)
        m = {e: LikelihoodModel(ds.train_locations, ds.train_z, eps=e) for e in (1e-2, 1e-4, 1e-6)}
        errs = [abs(m[e](p).loglik - ref) for e in (1e-2, 1e-4, 1e-6)]
        wins += errs[0] >= errs[1] >= errs[2]
    assert wins >= 3


def test_translation_invariance(grf512):
    pts, z, p = grf512
    a = evaluate(pts, z, p).loglik
    b = evaluate(pts + np.array([3.25, -1.5]), z, p).loglik
    assert abs(a - b) <= 1e-10 * abs(a)


@pytest.mark.parametrize("tau2", [1e-8, 1e-6, 1e-2])
def test_small_nugget_evaluates(tau2):
    ds = generate_dataset(1024, MaternParams(1.0, 0.1, 0.5, 1e-4), seed=3, split=1.0)
    r = evaluate(ds.train_locations, ds.train_z, MaternParams(1.0, 0.1, 0.5, tau2))
    assert math.isfinite(r.loglik)


def test_model_reuse_matches_evaluate(grf512):
    pts, z, p = grf512
    m = LikelihoodModel(pts, z)
    assert m(p).loglik == evaluate(pts, z, p).loglik
    q = MaternParams(2.0, 0.05, 1.5, 1e-3)
    assert m(q).loglik == evaluate(pts, z, q).loglik


def test_input_validation():
    with pytest.raises(ValueError, match="dimension"):
        evaluate([[0.0, 0.0], [1.0, 1.0]], [1.0], MaternParams(1, 1, 1))
    with pytest.raises(ValueError, match="empty"):
        evaluate(np.empty((0, 2)), [], MaternParams(1, 1, 1))
    with pytest.raises(ValueError, match="finite"):
        evaluate([[0.0, 0.0]], [math.nan], MaternParams(1, 1, 1))


def test_duplicate_points_without_nugget_fail_with_hint():
    pts = np.array([[0.5, 0.5], [0.5, 0.5], [0.1, 0.9]])
    with pytest.raises(FactorizationError, match="nugget"):
        evaluate(pts, [1.0, 1.0, 0.0], MaternParams(1.0, 0.3, 0.5, 0.0), form="cholesky")
