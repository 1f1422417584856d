"""Dataset CSV files and the fit report text format.

Point files are plain CSV with a header line: ``x,y,z`` for training data,
``x,y`` or ``x,y,z`` for test data and ``x,y,z_hat`` for predictions.
Values are written with 17 significant digits so a write/read round trip
reproduces every float exactly.
"""

from __future__ import annotations

import io
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .covkernel import MaternParams

__all__ = [
    "DataFormatError",
    "Dataset",
    "read_points",
    "write_points",
    "read_dataset",
    "write_dataset",
    "dataset_paths",
    "format_fit_report",
    "parse_fit_report",
    "read_fit_report",
    "atomic_write_text",
    "REPORT_VERSION",
]

REPORT_VERSION = 1
_FLOAT_FMT = "%.17g"


class DataFormatError(ValueError):
    pass


@dataclass
class Dataset:
    train_locations: np.ndarray
    train_z: np.ndarray
    test_locations: np.ndarray
    test_z: np.ndarray | None = None
    metadata: dict[str, str] = field(default_factory=dict)

    @property
    def n_train(self) -> int:
        return int(self.train_locations.shape[0])

    @property
    def n_test(self) -> int:
        return int(self.test_locations.shape[0])


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary file in the target directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# point files
# ---------------------------------------------------------------------------


def _parse_rows(lines, ncol: int, path) -> np.ndarray:
    out = np.empty((len(lines), ncol))
    for i, line in enumerate(lines):
        lineno = i + 2  # header is line 1
        parts = line.split(",")
        if len(parts) != ncol:
            raise DataFormatError(f"{path}:{lineno}: expected {ncol} fields, got {len(parts)}")
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: malformed number in {line!r}") from None
        if not all(math.isfinite(v) for v in vals):
            raise DataFormatError(f"{path}:{lineno}: non-finite value in {line!r}")
        out[i] = vals
    return out


def read_points(path, value_column: str | None = "z", require_value: bool = True):
    """Read an ``x,y[,value]`` CSV; returns (locations, values or None)."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    lines = [ln.rstrip("\r") for ln in lines]
    if not lines or not lines[0].strip():
        raise DataFormatError(f"{path}:1: missing header")
    header = [h.strip() for h in lines[0].split(",")]
    if header[:2] != ["x", "y"] or len(header) > 3:
        raise DataFormatError(f"{path}:1: bad header {lines[0]!r}; expected x,y[,{value_column}]")
    has_value = len(header) == 3
    if has_value and header[2] != value_column:
        raise DataFormatError(f"{path}:1: bad header {lines[0]!r}; expected x,y,{value_column}")
    if require_value and not has_value:
        raise DataFormatError(f"{path}:1: header lacks a {value_column} column")
    rows = _parse_rows(lines[1:], len(header), path)
    locs = np.ascontiguousarray(rows[:, :2])
    return locs, (rows[:, 2].copy() if has_value else None)


def format_points(locations, values=None, value_column: str = "z") -> str:
    locations = np.asarray(locations, dtype=float).reshape(-1, 2)
    cols = [locations]
    header = "x,y"
    if values is not None:
        cols.append(np.asarray(values, dtype=float).reshape(-1, 1))
        header += f",{value_column}"
    buf = io.StringIO()
    buf.write(header + "\n")
    if locations.shape[0]:
        np.savetxt(buf, np.hstack(cols), fmt=_FLOAT_FMT, delimiter=",", newline="\n")
    return buf.getvalue()


def write_points(path, locations, values=None, value_column: str = "z") -> None:
    atomic_write_text(path, format_points(locations, values, value_column))


def dataset_paths(prefix) -> tuple[Path, Path, Path]:
    """(train, test, metadata) file names for a dataset prefix."""
    prefix = str(prefix)
    return Path(prefix + ".train.csv"), Path(prefix + ".test.csv"), Path(prefix + ".meta.txt")


def write_dataset(ds: Dataset, prefix, written: list | None = None) -> list[Path]:
    """Write the train, test and metadata files; each path is appended to
    ``written`` as soon as that file exists."""
    written = [] if written is None else written
    train, test, meta = dataset_paths(prefix)
    write_points(train, ds.train_locations, ds.train_z)
    written.append(train)
    write_points(test, ds.test_locations, ds.test_z)
    written.append(test)
    atomic_write_text(meta, "".join(f"{k} = {v}\n" for k, v in sorted(ds.metadata.items())))
    written.append(meta)
    return written


def read_dataset(prefix) -> Dataset:
    train, test, meta = dataset_paths(prefix)
    tl, tz = read_points(train)
    if test.exists():
        sl, sz = read_points(test, require_value=False)
    else:
        sl, sz = np.empty((0, 2)), None
    metadata = _parse_keyvals(meta.read_text(encoding="utf-8").splitlines(), meta)[0] if meta.exists() else {}
    return Dataset(tl, tz, sl, sz, metadata)


# ---------------------------------------------------------------------------
# fit reports
# ---------------------------------------------------------------------------


def _parse_keyvals(lines, path):
    out = {}
    for i, line in enumerate(lines):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if s == "[trace]":
            return out, i + 1
        if "=" not in s:
            raise DataFormatError(f"{path}:{i + 1}: expected 'key = value', got {line!r}")
        k, v = s.split("=", 1)
        out[k.strip()] = v.strip()
    return out, None


def format_fit_report(report, extra: dict | None = None) -> str:
    """Text form of a FitReport: key = value lines, then the trace table.

    Wall-clock time is deliberately left out so reports are reproducible
    byte for byte.
    """
    th = report.theta_hat
    pt = report.point_hat
    lines = ["# hmle fit report", f"format_version = {REPORT_VERSION}"]
    kv = {
        "sigma2": th.sigma2, "ell": th.ell, "nu": th.nu, "tau2": th.tau2,
        "sigma0": pt.sigma0, "ell0": pt.ell0, "nu0": pt.nu0, "tau0": pt.tau0,
        "loglik": report.loglik_at_opt,
        "iterations": report.iterations,
        "n_evals": report.n_evals,
        "converged": "true" if report.converged else "false",
        "final_delta": report.final_delta,
    }
    kv.update(extra or {})
    for k, v in kv.items():
        lines.append(f"{k} = {v!r}" if isinstance(v, float) else f"{k} = {v}")
    lines.append("[trace]")
    lines.append("iteration,coordinate,sigma0,ell0,nu0,tau0,loglik")
    for t in report.trace:
        p = t.point
        lines.append(",".join([str(t.iteration), t.coordinate] + [repr(float(x)) for x in p.as_tuple()]
                              + [repr(float(t.loglik))]))
    return "\n".join(lines) + "\n"


def parse_fit_report(text: str, path="<report>") -> dict:
    """Key/value header of a fit report, plus ``params`` (MaternParams) and ``trace`` rows."""
    lines = text.splitlines()
    kv, start = _parse_keyvals(lines, path)
    if "format_version" not in kv:
        raise DataFormatError(f"{path}: not a fit report (format_version missing)")
    if int(kv["format_version"]) > REPORT_VERSION:
        raise DataFormatError(f"{path}: report version {kv['format_version']} is newer than supported")
    try:
        kv["params"] = MaternParams(float(kv["sigma2"]), float(kv["ell"]), float(kv["nu"]), float(kv["tau2"]))
    except KeyError as exc:
        raise DataFormatError(f"{path}: missing key {exc.args[0]}") from None
    trace = []
    if start is not None:
        for ln in lines[start + 1:]:
            if ln.strip():
                trace.append(ln.split(","))
    kv["trace"] = trace
    return kv


def read_fit_report(path) -> dict:
    return parse_fit_report(Path(path).read_text(encoding="utf-8"), path)
