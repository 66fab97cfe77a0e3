"""Anchor-based synthesis of candidate future speed profiles.

Looking l_f grid steps ahead, local altitude extrema become anchor points.
The first two anchors carry a speed bound around a gravity-exchange
reference line; later anchors and the horizon end are pinned to the target
speed. Evenly sampling the bounded anchors and interpolating linearly
between key points yields up to x^2 candidate speed lines, each assembled
into a future data chunk with the engine columns left at zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .grid import DataChunk, FEATURES, GridConfig, RouteProfile, THETA, V, A

GRAVITY = 9.81
V_FLOOR = 5.0   # global speed floor, avoids stalls and time-domain blowups
V_CEIL = 25.0   # reference-line ceiling

_GRID_TOL = 1e-6


@dataclass(frozen=True)
class FutureConfig:
    """Horizon geometry and speed-sampling parameters."""

    l_f: int = 60          # horizon length in grid points
    epsilon: float = 1e-3  # near-zero slope threshold for anchor detection
    v_d: float = 1.5       # half-width of bounded anchor speed ranges, m/s
    x: int = 12            # samples per bounded anchor (x^2 candidates)
    v_target: float = 21.5

    def __post_init__(self):
        if self.l_f < 2:
            raise DataError("horizon must be at least 2 points")
        if self.epsilon <= 0 or self.v_d <= 0 or self.x < 1:
            raise DataError("epsilon, v_d must be positive and x >= 1")
        if self.v_target <= 0:
            raise DataError("target speed must be positive")


@dataclass(frozen=True)
class KeyPoint:
    """A node of the piecewise-linear speed skeleton.

    s is relative to the current position. speed_bound is None on raw
    anchors until build_key_points assigns one.
    """

    s: float
    kind: str  # "start" | "anchor" | "end"
    speed_bound: tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind not in ("start", "anchor", "end"):
            raise DataError(f"unknown key point kind {self.kind!r}")
        if self.speed_bound is not None:
            lo, hi = self.speed_bound
            if lo > hi:
                raise DataError("speed bound lo exceeds hi")

    @property
    def bounded(self) -> bool:
        return self.speed_bound is not None and self.speed_bound[0] < self.speed_bound[1]


@dataclass(frozen=True)
class SpeedSeries:
    """Per-key-point speeds for one candidate, tagged by its sample indices."""

    speeds: tuple[float, ...]
    i: int
    j: int


@dataclass(frozen=True)
class FutureChunkSet:
    """All candidate future chunks for one replanning step."""

    chunks: tuple[DataChunk, ...]
    series: tuple[SpeedSeries, ...]

    def __len__(self) -> int:
        return len(self.chunks)


def detect_anchors(profile: RouteProfile, s_now: float,
                   cfg: FutureConfig, grid: GridConfig) -> list[KeyPoint]:
    """Altitude extrema among the upcoming horizon endpoints.

    A grid point is an anchor iff the discrete slope changes sign across it
    and the centered slope magnitude is below epsilon; flat plateaus and
    monotone stretches yield nothing. Returned in increasing s (relative).
    """
    ds = grid.delta_s
    hi = s_now + cfg.l_f * ds
    if not profile.covers(s_now, hi):
        raise DataError(f"profile does not cover horizon [{s_now}, {hi}]")
    # one point past the horizon is needed to judge the last endpoint
    last = cfg.l_f if profile.covers(s_now, hi + ds) else cfg.l_f - 1
    u = np.arange(0, last + 2)
    z = profile.altitude_at(s_now + u * ds)
    slope = np.diff(z) / ds                      # slope[k] enters point k+1
    centered = (z[2:] - z[:-2]) / (2.0 * ds)     # centered at points 1..last
    anchors = []
    for k in range(1, last + 1):
        if slope[k - 1] * slope[k] < 0 and abs(centered[k - 1]) < cfg.epsilon:
            anchors.append(KeyPoint(s=k * ds, kind="anchor"))
    return anchors


def reference_speed_line(v_now: float, profile: RouteProfile, s_now: float,
                         s_query) -> np.ndarray:
    """Gravity-exchange speed estimate at the queried absolute positions.

    Trades kinetic against potential energy from the current state and
    clamps to [V_FLOOR, V_CEIL].
    """
    if v_now <= 0:
        raise DataError("current speed must be positive")
    dz = profile.altitude_at(s_query) - profile.altitude_at(s_now)
    v_sq = np.maximum(V_FLOOR ** 2, v_now ** 2 - 2.0 * GRAVITY * dz)
    return np.minimum(np.sqrt(v_sq), V_CEIL)


def build_key_points(v_now: float, anchors: list[KeyPoint],
                     profile: RouteProfile, s_now: float,
                     cfg: FutureConfig, grid: GridConfig) -> list[KeyPoint]:
    """Start + anchors + end with speed bounds assigned.

    The start is fixed at the current speed, the first two anchors get a
    +-v_d band around the reference line, everything later (and the end) is
    pinned to the target speed. An anchor falling on the horizon end is
    absorbed by the end point.
    """
    ds = grid.delta_s
    horizon = cfg.l_f * ds
    v_t = max(cfg.v_target, V_FLOOR)
    points = [KeyPoint(s=0.0, kind="start", speed_bound=(v_now, v_now))]
    kept = [a for a in sorted(anchors, key=lambda a: a.s)
            if a.s < horizon - _GRID_TOL]
    for rank, anchor in enumerate(kept):
        if rank < 2:
            v_ref = float(reference_speed_line(v_now, profile, s_now,
                                               s_now + anchor.s))
            lo = max(v_ref - cfg.v_d, V_FLOOR)
            hi = max(v_ref + cfg.v_d, lo)
            bound = (lo, hi)
        else:
            bound = (v_t, v_t)
        points.append(KeyPoint(s=anchor.s, kind="anchor", speed_bound=bound))
    points.append(KeyPoint(s=horizon, kind="end", speed_bound=(v_t, v_t)))
    return points


def enumerate_series(key_points: list[KeyPoint],
                     cfg: FutureConfig) -> list[SpeedSeries]:
    """All candidate speed assignments over the key points.

    Each bounded anchor contributes x evenly spaced speeds including both
    bound ends (the midpoint for x = 1); the cartesian product over the
    bounded anchors gives x^2, x or 1 series.
    """
    def level_speeds(bound):
        lo, hi = bound
        if cfg.x == 1:
            return np.array([(lo + hi) / 2.0])
        return np.linspace(lo, hi, cfg.x)

    bounded_idx = [k for k, kp in enumerate(key_points) if kp.bounded]
    base = [kp.speed_bound[0] for kp in key_points]

    if not bounded_idx:
        return [SpeedSeries(speeds=tuple(base), i=0, j=0)]

    first = level_speeds(key_points[bounded_idx[0]].speed_bound)
    if len(bounded_idx) == 1:
        out = []
        for i, vi in enumerate(first):
            speeds = list(base)
            speeds[bounded_idx[0]] = float(vi)
            out.append(SpeedSeries(speeds=tuple(speeds), i=i, j=0))
        return out

    second = level_speeds(key_points[bounded_idx[1]].speed_bound)
    out = []
    for i, vi in enumerate(first):
        for j, vj in enumerate(second):
            speeds = list(base)
            speeds[bounded_idx[0]] = float(vi)
            speeds[bounded_idx[1]] = float(vj)
            out.append(SpeedSeries(speeds=tuple(speeds), i=i, j=j))
    return out


def interpolate_series(series: SpeedSeries, key_points: list[KeyPoint],
                       cfg: FutureConfig, grid: GridConfig) -> np.ndarray:
    """Linear interpolation of the key-point speeds onto every endpoint.

    v_u = ((s_next - s_u) * v_prev + (s_u - s_prev) * v_next)
          / (s_next - s_prev) for s_u in the segment [s_prev, s_next].
    """
    kp_s = np.array([kp.s for kp in key_points])
    kp_v = np.array(series.speeds)
    if len(kp_s) != len(kp_v):
        raise DataError("series length does not match key points")
    if kp_s[0] > _GRID_TOL or kp_s[-1] < cfg.l_f * grid.delta_s - _GRID_TOL:
        raise DataError("key points must cover the whole horizon")
    gaps = np.diff(kp_s)
    if np.any(gaps <= _GRID_TOL):
        bad = int(np.argmax(gaps <= _GRID_TOL))
        if abs(kp_v[bad] - kp_v[bad + 1]) > _GRID_TOL:
            raise DataError(
                f"coincident key points at s={kp_s[bad]} with distinct speeds")

    out = np.empty(cfg.l_f)
    for u in range(1, cfg.l_f + 1):
        s_u = u * grid.delta_s
        k = int(np.searchsorted(kp_s, s_u + _GRID_TOL)) - 1
        k = min(max(k, 0), len(kp_s) - 2)
        s0, s1 = kp_s[k], kp_s[k + 1]
        if abs(s_u - s0) <= _GRID_TOL:
            out[u - 1] = kp_v[k]
        elif abs(s_u - s1) <= _GRID_TOL:
            out[u - 1] = kp_v[k + 1]
        else:
            out[u - 1] = ((s1 - s_u) * kp_v[k] + (s_u - s0) * kp_v[k + 1]) / (s1 - s0)
    return out


def assemble_future_chunks(all_speeds, series: list[SpeedSeries],
                           profile: RouteProfile, s_now: float, v_now: float,
                           cfg: FutureConfig, grid: GridConfig) -> FutureChunkSet:
    """Fill candidate chunks: sampled v, kinematic a, map slope, zeros for T,S,f.

    Acceleration uses the distance-domain identity
    a_u = (v_u^2 - v_{u-1}^2) / (2*delta_s) with v_0 the current speed, so
    re-integrating a over the grid reproduces the sampled speeds exactly.
    """
    ds = grid.delta_s
    u = np.arange(1, cfg.l_f + 1)
    theta = profile.slope_at(s_now + u * ds)
    chunks = []
    for speeds in all_speeds:
        v = np.asarray(speeds, dtype=np.float64)
        if v.shape != (cfg.l_f,):
            raise DataError(f"each series must provide {cfg.l_f} speeds")
        prev = np.concatenate(([v_now], v[:-1]))
        a = (v ** 2 - prev ** 2) / (2.0 * ds)
        vals = np.zeros((cfg.l_f, len(FEATURES)))
        vals[:, V] = v
        vals[:, A] = a
        vals[:, THETA] = theta
        chunks.append(DataChunk(start_s=s_now, values=vals))
    return FutureChunkSet(chunks=tuple(chunks), series=tuple(series))


def sample_future(profile: RouteProfile, s_now: float, v_now: float,
                  cfg: FutureConfig, grid: GridConfig) -> FutureChunkSet:
    """Full pipeline: anchors -> key points -> series -> interpolated chunks."""
    v_now = max(v_now, V_FLOOR)
    anchors = detect_anchors(profile, s_now, cfg, grid)
    key_points = build_key_points(v_now, anchors, profile, s_now, cfg, grid)
    series = enumerate_series(key_points, cfg)
    speeds = [interpolate_series(sr, key_points, cfg, grid) for sr in series]
    return assemble_future_chunks(speeds, series, profile, s_now, v_now,
                                  cfg, grid)
