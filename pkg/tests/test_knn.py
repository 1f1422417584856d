import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmle.covkernel import MaternParams
from hmle.knn import KdTree, knn_predict, select_k
from hmle.simgen import generate_dataset


def brute_force(train, z, queries, k):
    out = np.empty(len(queries))
    for i, q in enumerate(queries):
        d2 = ((train - q) ** 2).sum(axis=1)
        idx = np.lexsort((np.arange(len(train)), d2))[:k]
        out[i] = math.fsum(z[idx]) / k
    return out


def test_k1_returns_the_point_itself():
    rng = np.random.default_rng(0)
    X, z = rng.random((100, 2)), rng.standard_normal(100)
    assert np.array_equal(knn_predict(X, z, X, 1), z)
    assert np.array_equal(KdTree(X).query(X, 1)[:, 0], np.arange(100))


def test_equidistant_mean():
    X = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    assert knn_predict(X, [1, 2, 3, 4], [[0.0, 0.0]], 4)[0] == 2.5


def test_tie_break_by_index():
    X = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0], [5.0, 5.0]])
    assert KdTree(X).query([[0.0, 0.0]], 2).tolist() == [[0, 1]]
    assert knn_predict(X, [10, 20, 30, 40, 0], [[0.0, 0.0]], 3)[0] == 20.0


@pytest.mark.parametrize("seed", range(3))
def test_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    X, z, Q = rng.random((2000, 2)), rng.standard_normal(2000), rng.random((200, 2))
    for k in (1, 3, 7, 20):
        assert np.array_equal(knn_predict(X, z, Q, k), brute_force(X, z, Q, k))


def test_matches_brute_force_on_grid_with_ties():
    g = np.array([(i, j) for i in range(30) for j in range(30)], dtype=float)
    z = np.random.default_rng(1).standard_normal(len(g))
    Q = np.array([(i + 0.5, j + 0.5) for i in range(0, 29, 4) for j in range(0, 29, 3)] + [(3.0, 3.0), (0.0, 0.0)])
    for k in (1, 2, 4, 5, 9, 13):
        assert np.array_equal(knn_predict(g, z, Q, k), brute_force(g, z, Q, k))


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 80), st.integers(0, 999))
def test_shuffle_invariance(n, seed):
    rng = np.random.default_rng(seed)
    X, z, Q = rng.random((n, 2)), rng.standard_normal(n), rng.random((10, 2))
    k = int(rng.integers(1, n + 1))
    perm = rng.permutation(n)
    assert np.array_equal(knn_predict(X, z, Q, k), knn_predict(X[perm], z[perm], Q, k))


def test_k_equals_n_gives_mean():
    rng = np.random.default_rng(2)
    X, z = rng.random((57, 2)), rng.standard_normal(57)
    np.testing.assert_array_equal(knn_predict(X, z, rng.random((5, 2)), 57), np.full(5, math.fsum(z) / 57))


def test_errors():
    X = np.zeros((3, 2)) + np.arange(3)[:, None]
    with pytest.raises(ValueError):
        knn_predict(X, [1, 2, 3], [[0, 0]], 4)
    with pytest.raises(ValueError, match="empty"):
        knn_predict(np.empty((0, 2)), [], [[0, 0]], 1)
    with pytest.raises(ValueError):
        knn_predict(X, [1, 2, 3], [[0, 0]], 0)


def test_select_k_constant_field_picks_one():
    X = np.random.default_rng(3).random((200, 2))
    sel = select_k(X, np.full(200, 4.2), splits=5)
    assert sel.k == 1


def test_select_k_smooth_field():
    ds = generate_dataset(1500, MaternParams(1.0, 0.3, 2.5, 0.0), seed=8, split=1.0)
    sel = select_k(ds.train_locations, ds.train_z, splits=20)
    assert 1 <= sel.k <= 20
    assert sel.cv_rmse[sel.k] <= sel.cv_rmse[20] <= sel.mean_rmse
    assert sel.cv_rmse[sel.k] < 0.9 * sel.mean_rmse


def test_select_k_degenerate_split():
    with pytest.raises(ValueError, match="degenerate"):
        select_k(np.random.default_rng(0).random((5, 2)), np.zeros(5), splits=2)
