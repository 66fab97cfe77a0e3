"""Distance-gridded data representation: chunks, route profiles, trips, stats.

Everything downstream works on a fixed grid of step ``delta_s`` meters with
the feature order (v, a, theta, T, S, f). A chunk anchored at ``start_s``
with length ``l`` holds the rows at endpoints ``start_s + k*delta_s`` for
k = 1..l. Speed and acceleration are instantaneous values at the endpoint;
torque and engine speed are interval averages; fuel is the total liters
burned over the interval.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContiguityError, CoverageError, DataError

FEATURES = ("v_mps", "a_mps2", "theta_rad", "T_nm", "S_rpm", "f_l")
V, A, THETA, T, S, F = range(6)

TRIP_HEADER = ["s_m", "v_mps", "a_mps2", "theta_rad", "T_nm", "S_rpm", "f_l"]
ROUTE_HEADER = ["s_m", "z_m"]

# tolerance for matching a float distance to a grid position
_GRID_TOL = 1e-6


@dataclass(frozen=True)
class GridConfig:
    """Grid step and feature split (known vs. predicted columns)."""

    delta_s: float = 50.0
    m: int = 6
    m_f: int = 3
    m_r: int = 3

    def __post_init__(self):
        if self.delta_s <= 0:
            raise DataError(f"delta_s must be positive, got {self.delta_s}")
        if self.m != self.m_f + self.m_r:
            raise DataError(f"m ({self.m}) must equal m_f + m_r "
                            f"({self.m_f} + {self.m_r})")


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.asarray(arr, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class DataChunk:
    """An l x m feature matrix on the grid, anchored just after ``start_s``."""

    start_s: float
    values: np.ndarray  # shape (l, m)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[1] != len(FEATURES):
            raise DataError(f"chunk values must be (l, {len(FEATURES)}), "
                            f"got {vals.shape}")
        object.__setattr__(self, "values", _readonly(vals))

    @property
    def length(self) -> int:
        return self.values.shape[0]

    def endpoints(self, delta_s: float) -> np.ndarray:
        k = np.arange(1, self.length + 1, dtype=np.float64)
        return self.start_s + k * delta_s

    @property
    def end_s(self) -> float:
        raise AttributeError("end_s needs delta_s; use endpoints(delta_s)[-1]")

    def with_values(self, values: np.ndarray) -> "DataChunk":
        return DataChunk(self.start_s, values)


@dataclass(frozen=True)
class RouteProfile:
    """Altitude and slope sampled every delta_s along the route."""

    s: np.ndarray
    z: np.ndarray
    theta: np.ndarray
    delta_s: float

    def __post_init__(self):
        for name in ("s", "z", "theta"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))
        if not (self.s.shape == self.z.shape == self.theta.shape):
            raise DataError("profile arrays must share one shape")
        if self.s.size < 2:
            raise DataError("profile needs at least two grid points")
        steps = np.diff(self.s)
        if not np.allclose(steps, self.delta_s, rtol=0, atol=_GRID_TOL):
            raise DataError("profile grid spacing is not constant delta_s")

    @property
    def start_s(self) -> float:
        return float(self.s[0])

    @property
    def end_s(self) -> float:
        return float(self.s[-1])

    def covers(self, lo: float, hi: float) -> bool:
        return self.s[0] - _GRID_TOL <= lo and hi <= self.s[-1] + _GRID_TOL

    def altitude_at(self, s) -> np.ndarray:
        return np.interp(s, self.s, self.z)

    def slope_at(self, s) -> np.ndarray:
        return np.interp(s, self.s, self.theta)


@dataclass(frozen=True)
class FeatureStats:
    """Per-feature min/max from a training corpus, for 0-1 scaling."""

    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mins", _readonly(self.mins))
        object.__setattr__(self, "maxs", _readonly(self.maxs))
        if self.mins.shape != (len(FEATURES),) or self.maxs.shape != (len(FEATURES),):
            raise DataError("stats must cover all %d features" % len(FEATURES))
        if np.any(self.maxs < self.mins):
            raise DataError("feature max below min")

    @property
    def spans(self) -> np.ndarray:
        return self.maxs - self.mins

    def to_dict(self) -> dict:
        return {"mins": self.mins.tolist(), "maxs": self.maxs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureStats":
        return cls(np.asarray(d["mins"]), np.asarray(d["maxs"]))


@dataclass(frozen=True)
class TripLog:
    """One freight trip: ordered records every delta_s."""

    s: np.ndarray
    values: np.ndarray  # shape (n, m)
    delta_s: float

    def __post_init__(self):
        object.__setattr__(self, "s", _readonly(self.s))
        object.__setattr__(self, "values", _readonly(self.values))
        if self.values.ndim != 2 or self.values.shape != (self.s.size, len(FEATURES)):
            raise DataError("trip values must be (n, %d)" % len(FEATURES))
        steps = np.diff(self.s)
        bad = np.nonzero(~np.isclose(steps, self.delta_s, rtol=0, atol=_GRID_TOL))[0]
        if bad.size:
            raise ContiguityError(
                f"trip records not spaced by delta_s at index {bad[0] + 1}",
                index=int(bad[0] + 1))
        if not np.all(np.isfinite(self.values)):
            raise DataError("trip contains non-finite values")

    @property
    def start_s(self) -> float:
        """Chunk-anchor origin: one step before the first record."""
        return float(self.s[0]) - self.delta_s

    @property
    def end_s(self) -> float:
        return float(self.s[-1])


def resample_route(raw_points, cfg: GridConfig) -> RouteProfile:
    """Interpolate raw (s, z) samples onto the delta_s grid.

    Altitude is linearly interpolated; slope at grid point k is
    atan((z_k - z_{k-1}) / delta_s), i.e. a backward difference so it only
    depends on road already traversed. The first point copies the second.
    """
    pts = np.asarray(raw_points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
        raise DataError("need at least two (s, z) raw points")
    s_raw, z_raw = pts[:, 0], pts[:, 1]
    diffs = np.diff(s_raw)
    bad = np.nonzero(diffs <= 0)[0]
    if bad.size:
        raise ContiguityError(
            f"raw route distances not strictly increasing at index {bad[0] + 1}",
            index=int(bad[0] + 1))

    ds = cfg.delta_s
    n = int(np.floor((s_raw[-1] - s_raw[0]) / ds + _GRID_TOL))
    if n < 1:
        raise DataError("raw route shorter than one grid step")
    s_grid = s_raw[0] + ds * np.arange(n + 1)
    z_grid = np.interp(s_grid, s_raw, z_raw)
    theta = np.empty_like(z_grid)
    theta[1:] = np.arctan(np.diff(z_grid) / ds)
    theta[0] = theta[1]
    return RouteProfile(s=s_grid, z=z_grid, theta=theta, delta_s=ds)


def make_chunk(trip: TripLog, s_t: float, l: int) -> DataChunk:
    """Extract the l records with endpoints s_t + delta_s .. s_t + l*delta_s."""
    if l < 1:
        raise DataError(f"chunk length must be >= 1, got {l}")
    ds = trip.delta_s
    lo, hi = s_t + ds, s_t + l * ds
    first = (lo - trip.s[0]) / ds
    i0 = int(round(first))
    if abs(first - i0) > _GRID_TOL:
        raise DataError(f"chunk anchor {s_t} is off the trip grid")
    if i0 < 0 or i0 + l > trip.s.size:
        raise CoverageError(
            f"trip covers [{trip.s[0]}, {trip.s[-1]}], chunk needs [{lo}, {hi}]",
            missing_lo=lo if i0 < 0 else trip.s[-1] + ds,
            missing_hi=trip.s[0] - ds if i0 < 0 else hi)
    return DataChunk(start_s=s_t, values=trip.values[i0:i0 + l])


def fit_stats(corpus) -> FeatureStats:
    """Per-feature min/max over all rows of all chunks.

    A constant feature widens max to min + 1 so scaling stays invertible.
    """
    chunks = list(corpus)
    if not chunks:
        raise DataError("cannot fit stats on an empty corpus")
    rows = np.vstack([c.values for c in chunks])
    mins = rows.min(axis=0)
    maxs = rows.max(axis=0)
    degenerate = maxs <= mins
    maxs = np.where(degenerate, mins + 1.0, maxs)
    return FeatureStats(mins=mins, maxs=maxs)


def normalize_values(values: np.ndarray, stats: FeatureStats) -> np.ndarray:
    """Scale features to the 0-1 range of the training stats, unclamped."""
    return (values - stats.mins) / stats.spans


def denormalize_values(values: np.ndarray, stats: FeatureStats) -> np.ndarray:
    return values * stats.spans + stats.mins


def normalize(chunk: DataChunk, stats: FeatureStats) -> DataChunk:
    return chunk.with_values(normalize_values(chunk.values, stats))


def denormalize(chunk: DataChunk, stats: FeatureStats) -> DataChunk:
    return chunk.with_values(denormalize_values(chunk.values, stats))


def _fmt(x: float) -> str:
    # repr of a Python float is shortest-round-trip: byte-stable output
    return repr(float(x))


def write_route_csv(path, s: np.ndarray, z: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ROUTE_HEADER)
        for si, zi in zip(s, z):
            w.writerow([_fmt(si), _fmt(zi)])


def read_route_csv(path) -> np.ndarray:
    """Return raw (s, z) points; pair with resample_route to get a profile."""
    path = Path(path)
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None or [h.strip() for h in header] != ROUTE_HEADER:
            raise DataError(f"{path}: expected header {','.join(ROUTE_HEADER)}")
        rows = []
        for i, row in enumerate(r):
            if not row:
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}: bad route row {i + 2}") from exc
    if len(rows) < 2:
        raise DataError(f"{path}: fewer than two route points")
    return np.asarray(rows, dtype=np.float64)


def write_trip_csv(path, trip: TripLog) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRIP_HEADER)
        for si, row in zip(trip.s, trip.values):
            w.writerow([_fmt(si)] + [_fmt(x) for x in row])


def read_trip_csv(path, cfg: GridConfig) -> TripLog:
    path = Path(path)
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None or [h.strip() for h in header] != TRIP_HEADER:
            raise DataError(f"{path}: expected header {','.join(TRIP_HEADER)}")
        s, vals = [], []
        for i, row in enumerate(r):
            if not row:
                continue
            try:
                nums = [float(x) for x in row]
            except ValueError as exc:
                raise DataError(f"{path}: bad trip row {i + 2}") from exc
            if len(nums) != len(TRIP_HEADER):
                raise DataError(f"{path}: trip row {i + 2} has {len(nums)} fields")
            s.append(nums[0])
            vals.append(nums[1:])
    if not s:
        raise DataError(f"{path}: empty trip")
    return TripLog(s=np.asarray(s), values=np.asarray(vals), delta_s=cfg.delta_s)
