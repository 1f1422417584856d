import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hmle.covkernel import MaternParams
from hmle.dataio import (
    DataFormatError,
    Dataset,
    format_fit_report,
    parse_fit_report,
    read_dataset,
    read_points,
    write_dataset,
    write_points,
)
from hmle.mle import FitReport, ReparamPoint, TraceEntry, reparam_to_params
from hmle.simgen import generate_dataset


def write(tmp_path, text, name="f.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_header_only_parses_empty(tmp_path):
    X, z = read_points(write(tmp_path, "x,y,z\n"))
    assert X.shape == (0, 2) and z.shape == (0,)


def test_single_row(tmp_path):
    X, z = read_points(write(tmp_path, "x,y,z\n0.5,0.5,1.0\n"))
    assert X.tolist() == [[0.5, 0.5]] and z.tolist() == [1.0]


def test_test_file_without_values(tmp_path):
    X, z = read_points(write(tmp_path, "x,y\n0.1,0.2\n0.3,0.4"), require_value=False)
    assert X.shape == (2, 2) and z is None


@pytest.mark.parametrize("text,where", [
    ("", ":1:"),
    ("a,b,c\n1,2,3\n", ":1:"),
    ("x,y\n1,2\n", ":1:"),
    ("x,y,z\n1,2,3\n1,2\n", ":3:"),
    ("x,y,z\n1,2,3\n4,5,6\n7,eight,9\n", ":4:"),
    ("x,y,z\n1,nan,3\n", ":2:"),
])
def test_errors_carry_line_numbers(tmp_path, text, where):
    with pytest.raises(DataFormatError, match=where):
        read_points(write(tmp_path, text))


def test_dataset_round_trip_bit_identical(tmp_path):
    ds = generate_dataset(1000, MaternParams(1.0, 0.1, 0.5, 0.01), seed=3)
    written = write_dataset(ds, tmp_path / "d")
    assert [p.name for p in written] == ["d.train.csv", "d.test.csv", "d.meta.txt"]
    back = read_dataset(tmp_path / "d")
    assert np.array_equal(back.train_locations, ds.train_locations)
    assert np.array_equal(back.train_z, ds.train_z)
    assert np.array_equal(back.test_locations, ds.test_locations)
    assert np.array_equal(back.test_z, ds.test_z)
    assert back.metadata == ds.metadata


@given(arrays(np.float64, st.tuples(st.integers(0, 20), st.just(3)),
              elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_points_round_trip_any_float(tmp_path_factory, rows):
    p = tmp_path_factory.mktemp("rt") / "p.csv"
    write_points(p, rows[:, :2], rows[:, 2])
    X, z = read_points(p)
    assert np.array_equal(X, rows[:, :2]) and np.array_equal(z, rows[:, 2])


def test_dataset_without_test_file(tmp_path):
    write_points(tmp_path / "e.train.csv", [[0.0, 1.0]], [2.0])
    ds = read_dataset(tmp_path / "e")
    assert ds.n_train == 1 and ds.n_test == 0 and ds.metadata == {}


def test_no_temp_files_left(tmp_path):
    write_dataset(Dataset(np.zeros((1, 2)), np.zeros(1), np.zeros((0, 2))), tmp_path / "t")
    assert sorted(p.name for p in tmp_path.iterdir()) == ["t.meta.txt", "t.test.csv", "t.train.csv"]


def make_report():
    pts = [ReparamPoint(2, 2, 1, 15), ReparamPoint(1.25, 2, 1, 15), ReparamPoint(1.25, 0.1 + 0.2, 1, 15)]
    trace = [TraceEntry(0, "init", pts[0], -10.5), TraceEntry(1, "sigma0", pts[1], -3.0),
             TraceEntry(2, "ell0", pts[2], -2.999999999999)]
    return FitReport(reparam_to_params(pts[2]), pts[2], -2.999999999999, 2, 17, True, 3e-12, trace, wall_time=9.9)


def test_fit_report_round_trip():
    rep = make_report()
    text = format_fit_report(rep, {"eps": 1e-6})
    kv = parse_fit_report(text)
    assert kv["params"] == rep.theta_hat
    assert float(kv["loglik"]) == rep.loglik_at_opt
    assert kv["iterations"] == "2" and kv["converged"] == "true" and kv["eps"] == "1e-06"
    assert len(kv["trace"]) == 3
    assert float(kv["trace"][2][3]) == 0.1 + 0.2
    assert "9.9" not in text  # wall time is not part of the file


def test_fit_report_rejects_garbage():
    with pytest.raises(DataFormatError):
        parse_fit_report("hello\n")
    with pytest.raises(DataFormatError, match="missing key"):
        parse_fit_report("format_version = 1\nsigma2 = 1\n")
    with pytest.raises(DataFormatError, match="newer"):
        parse_fit_report("format_version = 99\n")
    assert math.isfinite(float(parse_fit_report(format_fit_report(make_report()))["final_delta"]))
