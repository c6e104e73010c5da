"""Discrete paths on a uniform time grid and the deformations used by the
functional Itô calculus (flat extension, bump, concatenation)."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np


class GridMismatchError(ValueError):
    """Raised when two paths do not live on compatible grids."""


def _as_values(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"path values must be (n_steps+1, dim), got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("path values must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class DiscretePath:
    """A path sampled at ``start_time + i * dt`` for ``i = 0..n_steps``.

    ``values`` has shape ``(n_steps + 1, dim)``; a 1-D input is read as a
    single coordinate. Instances are immutable.
    """

    start_time: float
    dt: float
    values: np.ndarray

    def __post_init__(self):
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not (self.start_time >= 0 and np.isfinite(self.start_time)):
            raise ValueError(f"start_time must be >= 0, got {self.start_time}")
        object.__setattr__(self, "start_time", float(self.start_time))
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "values", _as_values(self.values))

    @property
    def n_steps(self) -> int:
        return self.values.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.start_time + np.arange(self.n_steps + 1) * self.dt

    def time_at(self, step: int) -> float:
        return self.start_time + step * self.dt

    @property
    def end_time(self) -> float:
        return self.time_at(self.n_steps)

    @property
    def last(self) -> np.ndarray:
        return self.values[-1]

    def prefix(self, step: int) -> "DiscretePath":
        """The path restricted to grid points ``0..step``."""
        _check_step(self, step)
        return DiscretePath(self.start_time, self.dt, self.values[: step + 1])

    def __eq__(self, other) -> bool:
        if not isinstance(other, DiscretePath):
            return NotImplemented
        return (
            self.start_time == other.start_time
            and self.dt == other.dt
            and self.values.shape == other.values.shape
            and bool(np.array_equal(self.values, other.values))
        )

    def __hash__(self):
        return hash((self.start_time, self.dt, self.values.shape, self.values.tobytes()))

    def __repr__(self):
        return (
            f"DiscretePath(start_time={self.start_time}, dt={self.dt}, "
            f"n_steps={self.n_steps}, dim={self.dim})"
        )


def _check_step(path: DiscretePath, step: int) -> None:
    if not 0 <= step <= path.n_steps:
        raise IndexError(f"step {step} outside 0..{path.n_steps}")


class PathBatch:
    """M paths sharing one grid, stored as an ``(M, n_steps+1, dim)`` array."""

    def __init__(self, values, dt: float, start_time: float = 0.0):
        arr = np.array(values, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[0] < 1:
            raise ValueError(f"batch values must be (M, n_steps+1, dim), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("batch values must be finite")
        if not dt > 0:
            raise ValueError("dt must be positive")
        arr.setflags(write=False)
        self.values = arr
        self.dt = float(dt)
        self.start_time = float(start_time)

    @classmethod
    def from_paths(cls, paths: Sequence[DiscretePath]) -> "PathBatch":
        if not paths:
            raise ValueError("a batch needs at least one path")
        first = paths[0]
        for p in paths[1:]:
            if (p.start_time, p.dt, p.values.shape) != (first.start_time, first.dt, first.values.shape):
                raise GridMismatchError("all paths in a batch must share the same grid")
        return cls(np.stack([p.values for p in paths]), first.dt, first.start_time)

    @property
    def size(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1] - 1

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    @property
    def times(self) -> np.ndarray:
        return self.start_time + np.arange(self.n_steps + 1) * self.dt

    @property
    def paths(self) -> list[DiscretePath]:
        return list(self)

    def __len__(self) -> int:
        return self.size

    def __getitem__(self, j: int) -> DiscretePath:
        return DiscretePath(self.start_time, self.dt, self.values[j])

    def __iter__(self) -> Iterator[DiscretePath]:
        for j in range(self.size):
            yield self[j]

    def subset(self, idx) -> "PathBatch":
        return PathBatch(self.values[idx], self.dt, self.start_time)

    def __repr__(self):
        return f"PathBatch(size={self.size}, n_steps={self.n_steps}, dim={self.dim}, dt={self.dt})"


def flat_extend(path: DiscretePath, k_steps: int = 1) -> DiscretePath:
    """Extend ``path`` by ``k_steps`` grid points frozen at its last value."""
    if k_steps < 1:
        raise ValueError("k_steps must be >= 1")
    tail = np.repeat(path.values[-1:], k_steps, axis=0)
    return DiscretePath(path.start_time, path.dt, np.vstack([path.values, tail]))


def bump(path: DiscretePath, h: float, dim_index: int = 0) -> DiscretePath:
    """Shift the final value of coordinate ``dim_index`` by ``h``."""
    if not 0 <= dim_index < path.dim:
        raise IndexError(f"dim_index {dim_index} outside 0..{path.dim - 1}")
    values = path.values.copy()
    values[-1, dim_index] += h
    return DiscretePath(path.start_time, path.dt, values)


def concatenate(prefix: DiscretePath, suffix: DiscretePath) -> DiscretePath:
    """Paste ``suffix`` (on [t, T]) onto ``prefix`` (on [s, t]).

    The suffix is shifted so the result is continuous at t:
    ``z_u - z_t + y_t`` for ``u >= t``.
    """
    if prefix.dt != suffix.dt or prefix.dim != suffix.dim:
        raise GridMismatchError("prefix and suffix need the same dt and dim")
    if not np.isclose(suffix.start_time, prefix.end_time, rtol=0.0, atol=1e-9 * max(1.0, prefix.end_time)):
        raise GridMismatchError(
            f"suffix starts at {suffix.start_time}, prefix ends at {prefix.end_time}"
        )
    shifted = suffix.values[1:] - suffix.values[0] + prefix.values[-1]
    return DiscretePath(prefix.start_time, prefix.dt, np.vstack([prefix.values, shifted]))


def sup_norm(path: DiscretePath) -> float:
    """Maximum over the grid of the Euclidean norm of each row."""
    v = path.values
    scale = np.max(np.abs(v), axis=1, keepdims=True)
    safe = np.where(scale > 0, scale, 1.0)
    # scaled to avoid underflow of the squared entries
    return float(np.max(scale[:, 0] * np.linalg.norm(v / safe, axis=1)))


def lambda_metric(a: DiscretePath, b: DiscretePath) -> float:
    """Distance between paths of possibly different lengths.

    The shorter path is flat-extended to the longer one's end time; the
    result is the sup-norm of the difference plus the end-time gap.
    """
    if a.dt != b.dt or a.dim != b.dim or a.start_time != b.start_time:
        raise GridMismatchError("paths need the same start_time, dt and dim")
    if a.n_steps > b.n_steps:
        a, b = b, a
    extra = b.n_steps - a.n_steps
    a_ext = flat_extend(a, extra) if extra else a
    diff = DiscretePath(a.start_time, a.dt, a_ext.values - b.values)
    return sup_norm(diff) + abs(b.end_time - a.end_time)


def running_integral(path: DiscretePath, up_to_step: int | None = None, coord: int = 0) -> float:
    """Left-endpoint Riemann sum ``dt * sum_{i < up_to_step} y_i`` of one coordinate."""
    if up_to_step is None:
        up_to_step = path.n_steps
    _check_step(path, up_to_step)
    return float(path.dt * np.sum(path.values[:up_to_step, coord]))


def running_extremum(path: DiscretePath, kind: str = "min", up_to_step: int | None = None) -> float:
    """Running min or max of coordinate 0 over grid points ``0..up_to_step``."""
    if up_to_step is None:
        up_to_step = path.n_steps
    _check_step(path, up_to_step)
    seg = path.values[: up_to_step + 1, 0]
    if kind == "min":
        return float(seg.min())
    if kind == "max":
        return float(seg.max())
    raise ValueError(f"kind must be 'min' or 'max', got {kind!r}")


# -- batched statistics (all steps at once) ---------------------------------

def cumulative_integral(values: np.ndarray, dt: float) -> np.ndarray:
    """Left-endpoint running integral at every grid point along axis -2.

    ``values`` is ``(..., n+1, dim)``; returns the same shape with entry i
    equal to ``dt * sum_{j < i} values[..., j, :]``.
    """
    out = np.zeros_like(values)
    np.cumsum(values[..., :-1, :], axis=-2, out=out[..., 1:, :])
    return out * dt


@dataclass(frozen=True)
class PathState:
    """The statistics of a path prefix that the catalogued functionals need.

    Arrays broadcast against each other: ``t`` and the scalars have the
    batch shape ``S``; ``y`` and ``integral`` have shape ``S + (dim,)``.
    ``integral`` and ``log_integral`` (coordinate 0) are left-endpoint sums
    over the grid points strictly before the current one, and ``min_before``
    is the minimum of coordinate 0 over those points (``+inf`` at the start).
    """

    t: np.ndarray
    y: np.ndarray
    integral: np.ndarray
    log_integral: np.ndarray
    min_before: np.ndarray

    @property
    def running_min(self) -> np.ndarray:
        return np.minimum(self.min_before, self.y[..., 0])

    def bumped(self, h: float, dim_index: int = 0) -> "PathState":
        y = np.array(self.y, dtype=np.float64, copy=True)
        y[..., dim_index] += h
        return PathState(self.t, y, self.integral, self.log_integral, self.min_before)

    def extended(self, delta: float) -> "PathState":
        """Flat extension by ``delta``: time advances, the value is frozen."""
        y0 = self.y[..., 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            log_y = np.where(y0 > 0, np.log(np.where(y0 > 0, y0, 1.0)), np.nan)
        return PathState(
            self.t + delta,
            self.y,
            self.integral + delta * self.y,
            self.log_integral + delta * log_y,
            np.minimum(self.min_before, y0),
        )

    @classmethod
    def from_values(cls, values: np.ndarray, dt: float, start_time: float = 0.0) -> "PathState":
        """States at every grid point of ``(..., n+1, dim)`` values."""
        values = np.asarray(values, dtype=np.float64)
        n1 = values.shape[-2]
        t = np.broadcast_to(start_time + np.arange(n1) * dt, values.shape[:-1])
        y0 = values[..., 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            log_y = np.where(y0 > 0, np.log(np.where(y0 > 0, y0, 1.0)), np.nan)
        log_int = np.zeros_like(y0)
        np.cumsum(log_y[..., :-1], axis=-1, out=log_int[..., 1:])
        min_before = np.full_like(y0, np.inf)
        if n1 > 1:
            min_before[..., 1:] = np.minimum.accumulate(y0[..., :-1], axis=-1)
        return cls(t, values, cumulative_integral(values, dt), log_int * dt, min_before)

    @classmethod
    def from_path(cls, path: "DiscretePath", step: int | None = None) -> "PathState":
        step = path.n_steps if step is None else step
        _check_step(path, step)
        full = cls.from_values(path.values, path.dt, path.start_time)
        return cls(
            np.asarray(full.t[step]), full.y[step], full.integral[step],
            np.asarray(full.log_integral[step]), np.asarray(full.min_before[step]),
        )


# -- CSV ---------------------------------------------------------------------

def write_path_csv(path: DiscretePath, target) -> None:
    """Write ``t,dim0,...`` rows with 17 significant digits."""
    with open(target, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"dim{j}" for j in range(path.dim)])
        for t, row in zip(path.times, path.values):
            w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])


def read_path_csv(source) -> DiscretePath:
    with open(source, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if not header or header[0] != "t" or not body:
        raise ValueError(f"{source}: expected a 't,dim0,...' header and at least one row")
    data = np.array([[float(x) for x in r] for r in body])
    t = data[:, 0]
    dt = float(t[1] - t[0]) if len(t) > 1 else 1.0
    if len(t) > 2 and not np.allclose(np.diff(t), dt, rtol=1e-9, atol=1e-12):
        raise ValueError(f"{source}: grid is not uniform")
    return DiscretePath(float(t[0]), dt, data[:, 1:])


def write_batch_csv(batch: PathBatch, directory) -> list[Path]:
    """One ``path_XXXXX.csv`` file per path inside ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    width = max(5, len(str(batch.size - 1)))
    files = []
    for j, p in enumerate(batch):
        f = directory / f"path_{j:0{width}d}.csv"
        write_path_csv(p, f)
        files.append(f)
    return files


def read_batch_csv(source) -> PathBatch:
    """Read a directory of path CSVs (sorted by name) or a single CSV file."""
    source = Path(source)
    files = sorted(source.glob("path_*.csv")) if source.is_dir() else [source]
    if not files:
        raise FileNotFoundError(f"no path_*.csv files in {source}")
    paths = [read_path_csv(f) for f in files]
    # re-read dt from the first file for every path so the grids compare exactly
    dt, t0 = paths[0].dt, paths[0].start_time
    return PathBatch.from_paths([DiscretePath(t0, dt, p.values) for p in paths])
