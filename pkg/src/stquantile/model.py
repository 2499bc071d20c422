"""Core data types: panels of spatio-temporal responses, quantile directions,
solver options and fit results, plus the long-format CSV reader/writer."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "DatasetError",
    "SpatioTemporalDataset",
    "QuantileDirection",
    "SolverOptions",
    "QuantileEstimate",
    "direction_from_tau",
    "load_dataset",
    "save_dataset",
]

RESPONSES_FILE = "responses.csv"
COVARIATES_FILE = "covariates.csv"
LOCATIONS_FILE = "locations.csv"


class DatasetError(ValueError):
    """Raised when a dataset violates the panel schema."""


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SpatioTemporalDataset:
    """Complete panel of ``n`` time points by ``p`` locations.

    Parameters
    ----------
    times : (n,) array
        Strictly increasing time stamps in [0, 1].
    responses : (n, p) array
        Row ``i`` is the response vector observed at ``times[i]``.
    covariates : (n, d) array
        Row ``i`` is the covariate vector observed at ``times[i]``.
    locations : sequence of str
        Location labels, one per response column.
    coords : (p, 2) array, optional
        Planar coordinates of the locations when known.
    """

    times: np.ndarray
    responses: np.ndarray
    covariates: np.ndarray
    locations: tuple = ()
    coords: Optional[np.ndarray] = None

    def __post_init__(self):
        times = _frozen(self.times)
        responses = _frozen(np.atleast_2d(self.responses))
        covariates = np.asarray(self.covariates, dtype=float)
        if covariates.ndim == 1:
            covariates = covariates[:, None]
        covariates = _frozen(covariates)
        n, p = responses.shape
        if times.ndim != 1 or times.size != n:
            raise DatasetError("times must be a vector with one entry per response row")
        if n < 2:
            raise DatasetError("need at least two time points")
        if np.any(np.diff(times) <= 0):
            raise DatasetError("times must be strictly increasing")
        if times[0] < 0 or times[-1] > 1:
            raise DatasetError("times must lie in [0, 1]")
        if covariates.shape[0] != n or covariates.shape[1] < 1:
            raise DatasetError("covariates must be an (n, d) matrix with d >= 1")
        if not (np.all(np.isfinite(responses)) and np.all(np.isfinite(covariates))):
            raise DatasetError("responses and covariates must be finite")
        locations = tuple(str(s) for s in self.locations) or tuple(str(j) for j in range(p))
        if len(locations) != p:
            raise DatasetError("one location label per response column is required")
        coords = self.coords
        if coords is not None:
            coords = _frozen(coords)
            if coords.shape != (p, 2) or not np.all(np.isfinite(coords)):
                raise DatasetError("coords must be a finite (p, 2) array")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "responses", responses)
        object.__setattr__(self, "covariates", covariates)
        object.__setattr__(self, "locations", locations)
        object.__setattr__(self, "coords", coords)

    @property
    def n(self) -> int:
        return self.responses.shape[0]

    @property
    def p(self) -> int:
        return self.responses.shape[1]

    @property
    def d(self) -> int:
        return self.covariates.shape[1]

    def head(self, m: int) -> "SpatioTemporalDataset":
        """First ``m`` time points (times are kept, not rescaled)."""
        return SpatioTemporalDataset(self.times[:m], self.responses[:m],
                                     self.covariates[:m], self.locations, self.coords)

    def with_responses(self, responses) -> "SpatioTemporalDataset":
        return SpatioTemporalDataset(self.times, responses, self.covariates,
                                     self.locations, self.coords)

    def subset_locations(self, index) -> "SpatioTemporalDataset":
        index = np.asarray(index)
        coords = None if self.coords is None else self.coords[index]
        return SpatioTemporalDataset(self.times, self.responses[:, index], self.covariates,
                                     [self.locations[j] for j in index], coords)

    def equals(self, other: "SpatioTemporalDataset") -> bool:
        same_coords = (self.coords is None and other.coords is None) or (
            self.coords is not None and other.coords is not None
            and np.array_equal(self.coords, other.coords))
        return (np.array_equal(self.times, other.times)
                and np.array_equal(self.responses, other.responses)
                and np.array_equal(self.covariates, other.covariates)
                and self.locations == other.locations and same_coords)


@dataclass(frozen=True, eq=False)
class QuantileDirection:
    """Direction ``u`` in the open unit ball indexing a geometric quantile."""

    u: np.ndarray
    tau: Optional[float] = None

    def __post_init__(self):
        u = _frozen(np.atleast_1d(self.u))
        if u.ndim != 1 or not np.all(np.isfinite(u)):
            raise ValueError("u must be a finite vector")
        if not np.linalg.norm(u) < 1:
            raise ValueError("quantile direction must satisfy ||u|| < 1")
        object.__setattr__(self, "u", u)

    @property
    def p(self) -> int:
        return self.u.size

    @classmethod
    def median(cls, p: int) -> "QuantileDirection":
        return cls(np.zeros(p), 0.5)


def direction_from_tau(tau: float, p: int) -> QuantileDirection:
    """Evenly spread direction ``(2 tau - 1) 1_p / sqrt(p)``.

    >>> direction_from_tau(0.75, 4).u
    array([0.25, 0.25, 0.25, 0.25])
    """
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    if p < 1:
        raise ValueError("p must be positive")
    u = np.full(p, (2 * tau - 1) / math.sqrt(p))
    direction = QuantileDirection(u, float(tau))
    assert np.linalg.norm(direction.u) < 1
    return direction


@dataclass(frozen=True)
class SolverOptions:
    """Stopping rule and numerical safeguards for the IRLS solver.

    ``ridge=None`` selects the data-scaled default
    ``1e-8 * trace(sum_i w_i K_i^2) / p``. ``drift`` multiplies the
    ``sum_i K_i u`` term of the update; 1 makes every step a majorize-minimize
    step of the criterion, whose fixed points solve the estimating equation.
    Other values move the fixed point to the ``drift * u`` quantile.
    ``accelerate`` extrapolates over pairs of updates, keeping descent.
    """

    max_iter: int = 500
    tol: float = 1e-8
    residual_tol: float = 1e-6
    ridge: Optional[float] = None
    guard_eps: float = 1e-10
    drift: float = 1.0
    accelerate: bool = True

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if not (self.tol > 0 and self.residual_tol > 0 and self.guard_eps > 0):
            raise ValueError("tolerances must be positive")
        if self.ridge is not None and self.ridge < 0:
            raise ValueError("ridge must be nonnegative")


@dataclass(frozen=True, eq=False)
class QuantileEstimate:
    q_hat: np.ndarray
    objective: float
    residual_norm: float
    iterations: int
    converged: bool
    at_datapoint: bool = False
    history: tuple = field(default=(), repr=False)


# ---------------------------------------------------------------------------
# CSV ingestion


def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    reader = csv.reader(lines)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DatasetError(f"{path}: empty file") from None
    return header, [row for row in reader]


def _as_float(value, path, lineno):
    try:
        return float(value)
    except ValueError:
        raise DatasetError(f"{path}:{lineno}: cannot parse {value!r} as a number") from None


def _resolve(path):
    if os.path.isdir(path):
        return (os.path.join(path, RESPONSES_FILE), os.path.join(path, COVARIATES_FILE),
                os.path.join(path, LOCATIONS_FILE))
    folder = os.path.dirname(path)
    return path, os.path.join(folder, COVARIATES_FILE), os.path.join(folder, LOCATIONS_FILE)


def load_dataset(path) -> SpatioTemporalDataset:
    """Read a long-format panel.

    ``path`` is either a directory holding ``responses.csv`` and
    ``covariates.csv`` (and optionally ``locations.csv`` with columns
    ``location,s1,s2``) or the responses file itself. Times are mapped
    affinely onto [0, 1].
    """
    resp_path, cov_path, loc_path = _resolve(os.fspath(path))
    header, rows = _read_rows(resp_path)
    if header != ["time", "location", "value"]:
        raise DatasetError(f"{resp_path}: expected header time,location,value")
    raw_times, locations, cells = [], {}, {}
    last = -math.inf
    for lineno, row in enumerate(rows, start=2):
        if len(row) != 3:
            raise DatasetError(f"{resp_path}:{lineno}: expected 3 fields")
        t = _as_float(row[0], resp_path, lineno)
        if t < last:
            raise DatasetError(f"{resp_path}:{lineno}: time column is not monotone")
        if t > last:
            raw_times.append(t)
            last = t
        loc = row[1].strip()
        locations.setdefault(loc, len(locations))
        key = (len(raw_times) - 1, locations[loc])
        if key in cells:
            raise DatasetError(f"{resp_path}:{lineno}: duplicate cell ({row[0]}, {loc})")
        cells[key] = _as_float(row[2], resp_path, lineno)
    n, p = len(raw_times), len(locations)
    if len(cells) != n * p:
        missing = next((raw_times[i], loc) for i in range(n) for loc, j in locations.items()
                       if (i, j) not in cells)
        raise DatasetError(f"{resp_path}: ragged panel, missing cell {missing}")
    responses = np.empty((n, p))
    for (i, j), v in cells.items():
        responses[i, j] = v

    cov_header, cov_rows = _read_rows(cov_path)
    if len(cov_header) < 2 or cov_header[0] != "time":
        raise DatasetError(f"{cov_path}: expected header time,x1,...,xd")
    if len(cov_rows) != n:
        raise DatasetError(f"{cov_path}: expected {n} rows, found {len(cov_rows)}")
    covariates = np.empty((n, len(cov_header) - 1))
    for i, row in enumerate(cov_rows):
        if len(row) != len(cov_header):
            raise DatasetError(f"{cov_path}:{i + 2}: wrong number of fields")
        if _as_float(row[0], cov_path, i + 2) != raw_times[i]:
            raise DatasetError(f"{cov_path}:{i + 2}: time does not match responses")
        covariates[i] = [_as_float(v, cov_path, i + 2) for v in row[1:]]

    coords = None
    if os.path.exists(loc_path):
        loc_header, loc_rows = _read_rows(loc_path)
        if loc_header != ["location", "s1", "s2"]:
            raise DatasetError(f"{loc_path}: expected header location,s1,s2")
        table = {r[0].strip(): (_as_float(r[1], loc_path, k + 2), _as_float(r[2], loc_path, k + 2))
                 for k, r in enumerate(loc_rows)}
        try:
            coords = np.array([table[loc] for loc in locations])
        except KeyError as exc:
            raise DatasetError(f"{loc_path}: no coordinates for location {exc}") from None

    raw = np.array(raw_times)
    if n < 2:
        raise DatasetError(f"{resp_path}: need at least two time points")
    times = (raw - raw[0]) / (raw[-1] - raw[0])
    return SpatioTemporalDataset(times, responses, covariates, tuple(locations), coords)


def _fmt(x) -> str:
    return repr(float(x))


def save_dataset(dataset: SpatioTemporalDataset, folder, header: Optional[str] = None) -> None:
    """Write ``dataset`` in the canonical long-format encoding.

    Floats are written with ``repr`` so that reloading is bit-exact.
    """
    from .io import atomic_write

    os.makedirs(folder, exist_ok=True)
    prefix = f"# {header}\n" if header else ""
    lines = ["time,location,value"]
    for i, t in enumerate(dataset.times):
        for j, loc in enumerate(dataset.locations):
            lines.append(f"{_fmt(t)},{loc},{_fmt(dataset.responses[i, j])}")
    atomic_write(os.path.join(folder, RESPONSES_FILE), prefix + "\n".join(lines) + "\n")
    cols = ",".join(f"x{k + 1}" for k in range(dataset.d))
    lines = [f"time,{cols}"]
    for t, row in zip(dataset.times, dataset.covariates):
        lines.append(",".join([_fmt(t)] + [_fmt(v) for v in row]))
    atomic_write(os.path.join(folder, COVARIATES_FILE), prefix + "\n".join(lines) + "\n")
    if dataset.coords is not None:
        lines = ["location,s1,s2"]
        for loc, (a, b) in zip(dataset.locations, dataset.coords):
            lines.append(f"{loc},{_fmt(a)},{_fmt(b)}")
        atomic_write(os.path.join(folder, LOCATIONS_FILE), prefix + "\n".join(lines) + "\n")

