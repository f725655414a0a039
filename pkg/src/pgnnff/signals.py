"""Time-series containers, reference differentiation, splits, norms and CSV I/O."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_TS = 1.0 / 500.0

DATASET_HEADER = ("k", "theta", "u_hat")
TRAJECTORY_HEADER = ("k", "theta_d", "theta_d_dot", "theta_d_ddot")


class SignalError(ValueError):
    """Invalid signal, dataset or file content."""


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if arr.ndim != 1:
        raise SignalError(f"expected a 1-D array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Trajectory:
    """Reference angle with its first and second derivative, sampled at ``ts``."""

    theta_d: np.ndarray
    theta_d_dot: np.ndarray
    theta_d_ddot: np.ndarray
    ts: float

    def __post_init__(self):
        for name in ("theta_d", "theta_d_dot", "theta_d_ddot"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        n = self.theta_d.size
        if self.theta_d_dot.size != n or self.theta_d_ddot.size != n:
            raise SignalError("trajectory arrays must have equal length")
        if n < 1:
            raise SignalError("trajectory must contain at least one sample")
        if not self.ts > 0:
            raise SignalError(f"ts must be positive, got {self.ts}")

    @property
    def n(self) -> int:
        return int(self.theta_d.size)

    @property
    def time(self) -> np.ndarray:
        return np.arange(self.n) * self.ts

    def slice(self, start: int, stop: int) -> "Trajectory":
        return Trajectory(self.theta_d[start:stop], self.theta_d_dot[start:stop],
                          self.theta_d_ddot[start:stop], self.ts)


@dataclass(frozen=True)
class IODataset:
    """Paired realized angle and required input samples."""

    theta: np.ndarray
    u_hat: np.ndarray
    ts: float = DEFAULT_TS

    def __post_init__(self):
        object.__setattr__(self, "theta", _frozen(self.theta))
        object.__setattr__(self, "u_hat", _frozen(self.u_hat))
        if self.theta.size != self.u_hat.size:
            raise SignalError("theta and u_hat must have equal length")
        if not self.ts > 0:
            raise SignalError(f"ts must be positive, got {self.ts}")

    def __len__(self) -> int:
        return int(self.theta.size)


@dataclass(frozen=True)
class SplitIndices:
    train: range
    validation: range
    test: range


@dataclass(frozen=True)
class ErrorNorms:
    rms: float
    ma: float
    inf: float

    def as_dict(self) -> dict:
        return {"rms": self.rms, "ma": self.ma, "inf": self.inf}


def differentiate_reference(theta_d, ts: float) -> Trajectory:
    """Second-order finite differences: central inside, one-sided at the ends."""
    x = np.asarray(theta_d, dtype=np.float64)
    if x.ndim != 1 or x.size < 3:
        raise SignalError("differentiate_reference needs at least 3 samples")
    if not ts > 0:
        raise SignalError(f"ts must be positive, got {ts}")
    n = x.size
    v = np.empty(n)
    a = np.empty(n)
    v[1:-1] = (x[2:] - x[:-2]) / (2.0 * ts)
    # endpoint stencils written as differences so constants give exact zeros
    v[0] = (4.0 * (x[1] - x[0]) - (x[2] - x[0])) / (2.0 * ts)
    v[-1] = -(4.0 * (x[-2] - x[-1]) - (x[-3] - x[-1])) / (2.0 * ts)
    ts2 = ts * ts
    a[1:-1] = (x[2:] - 2.0 * x[1:-1] + x[:-2]) / ts2
    if n >= 4:
        a[0] = (-5.0 * (x[1] - x[0]) + 4.0 * (x[2] - x[0]) - (x[3] - x[0])) / ts2
        a[-1] = (-5.0 * (x[-2] - x[-1]) + 4.0 * (x[-3] - x[-1]) - (x[-4] - x[-1])) / ts2
    else:
        a[0] = a[-1] = a[1]
    return Trajectory(x, v, a, ts)


def split_dataset(ds: IODataset, fractions=(0.8, 0.1, 0.1)) -> SplitIndices:
    """Contiguous train/validation/test blocks in temporal order."""
    if len(fractions) != 3 or any(not f > 0 for f in fractions):
        raise SignalError(f"fractions must be three positive numbers, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise SignalError(f"fractions must sum to 1, got {sum(fractions)}")
    n = len(ds)
    if n < 10:
        raise SignalError(f"dataset too small to split: N={n} < 10")
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise SignalError(f"split of N={n} leaves an empty block")
    return SplitIndices(range(0, n_train), range(n_train, n_train + n_val),
                        range(n_train + n_val, n))


def error_norms(s) -> ErrorNorms:
    s = np.asarray(s, dtype=np.float64).ravel()
    if s.size == 0:
        raise SignalError("error_norms of an empty signal")
    a = np.abs(s)
    peak = float(np.max(a))
    if peak == 0.0:
        return ErrorNorms(0.0, 0.0, 0.0)
    q = a / peak  # scaled so squares neither overflow nor underflow
    return ErrorNorms(rms=peak * float(np.sqrt(np.mean(q * q))), ma=float(np.mean(a)), inf=peak)


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_csv(path, header, columns):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = len(columns[0])
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for k in range(n):
            fh.write(str(k) + "," + ",".join(_fmt(c[k]) for c in columns) + "\n")


def _read_csv(path, header):
    """Return the float columns of a CSV whose first column is the sample index."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            found = tuple(h.strip() for h in next(reader))
        except StopIteration:
            raise SignalError(f"{path}: empty file") from None
        missing = [h for h in header if h not in found]
        if missing:
            raise SignalError(f"{path}: missing column(s) {missing}")
        idx = [found.index(h) for h in header[1:]]
        cols = [[] for _ in idx]
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(found):
                raise SignalError(f"{path}:{lineno}: expected {len(found)} fields, got {len(row)}")
            for c, i in zip(cols, idx):
                try:
                    v = float(row[i])
                except ValueError:
                    raise SignalError(f"{path}:{lineno}: cannot parse {row[i]!r}") from None
                if not math.isfinite(v):
                    raise SignalError(f"{path}:{lineno}: non-finite value {row[i]!r}")
                c.append(v)
    return [np.array(c, dtype=np.float64) for c in cols]


def write_dataset_csv(ds: IODataset, path) -> None:
    _write_csv(path, DATASET_HEADER, [ds.theta, ds.u_hat])


def read_dataset_csv(path, ts: float = DEFAULT_TS) -> IODataset:
    theta, u_hat = _read_csv(path, DATASET_HEADER)
    return IODataset(theta, u_hat, ts)


def write_trajectory_csv(traj: Trajectory, path) -> None:
    _write_csv(path, TRAJECTORY_HEADER, [traj.theta_d, traj.theta_d_dot, traj.theta_d_ddot])


def read_trajectory_csv(path, ts: float = DEFAULT_TS) -> Trajectory:
    return Trajectory(*_read_csv(path, TRAJECTORY_HEADER), ts)


def write_columns_csv(path, header, columns) -> None:
    """Generic sample-indexed CSV writer used for simulation and plot series."""
    _write_csv(path, ("k",) + tuple(header), [np.asarray(c, dtype=np.float64) for c in columns])
