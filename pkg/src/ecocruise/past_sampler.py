"""Online past-data sampling: trip buffer, sliding windows, primitive sets.

The buffer accumulates the current trip record by record. Sample primitives
are fixed-length windows drawn from the buffered past, excluding the latest
history window, chosen to cover diverse grades; together with the latest
history chunk they form the model's context inputs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ColdStartError, ContiguityError, DataError
from .grid import THETA, DataChunk, FEATURES, GridConfig, TripLog, make_chunk

_GRID_TOL = 1e-6


@dataclass(frozen=True)
class SamplerConfig:
    """Window geometry for primitive sampling."""

    l_h: int = 40                      # primitive length in grid points
    window_step: float = 1000.0        # sliding-window step, meters
    max_distance: float = 100000.0     # lookback limit for sample windows
    refresh_interval: float = 100000.0  # regenerate primitives this often
    p: int = 10                        # number of sample primitives

    def __post_init__(self):
        if self.l_h < 1 or self.p < 1:
            raise DataError("l_h and p must be positive")
        if self.window_step <= 0 or self.max_distance <= 0:
            raise DataError("window_step and max_distance must be positive")

    def validate(self, grid: GridConfig) -> None:
        if self.l_h * grid.delta_s > self.max_distance:
            raise DataError("primitive length exceeds max_distance")
        if self.window_step < grid.delta_s:
            raise DataError("window_step must be at least delta_s")


class TripBuffer:
    """Append-only record store for the current trip. Single writer."""

    def __init__(self, grid: GridConfig):
        self.grid = grid
        self._s: list[float] = []
        self._rows: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self._s)

    @property
    def s_now(self) -> float:
        if not self._s:
            raise DataError("empty buffer has no current position")
        return self._s[-1]

    @property
    def origin(self) -> float:
        """Chunk-anchor origin, one step before the first record."""
        if not self._s:
            raise DataError("empty buffer has no origin")
        return self._s[0] - self.grid.delta_s

    @property
    def span(self) -> float:
        return self.s_now - self.origin if self._s else 0.0

    def append(self, s: float, features) -> None:
        row = np.asarray(features, dtype=np.float64)
        if row.shape != (len(FEATURES),):
            raise DataError(f"record needs {len(FEATURES)} features")
        if not np.isfinite(row).all() or not np.isfinite(s):
            raise DataError("record contains non-finite values")
        if self._s:
            expected = self._s[-1] + self.grid.delta_s
            if abs(s - expected) > _GRID_TOL:
                raise ContiguityError(
                    f"record at s={s} breaks contiguity (expected {expected})",
                    index=len(self._s))
        self._s.append(float(s))
        self._rows.append(row)

    def as_trip(self) -> TripLog:
        if not self._s:
            raise DataError("empty buffer")
        return TripLog(s=np.asarray(self._s), values=np.vstack(self._rows),
                       delta_s=self.grid.delta_s)

    def tail_chunk(self, l: int) -> DataChunk:
        """The latest l records, ending at s_now."""
        return make_chunk(self.as_trip(), self.s_now - l * self.grid.delta_s, l)


@dataclass(frozen=True)
class PrimitiveSet:
    """p sample windows plus the latest history chunk, frozen at generated_at."""

    samples: tuple[DataChunk, ...]
    history: DataChunk
    generated_at: float


def candidate_windows(buffer: TripBuffer, cfg: SamplerConfig) -> list[float]:
    """Start positions of all admissible sample windows, oldest first.

    Windows step forward from the oldest allowed start; none may reach into
    the latest history window (the newest end is s_now - l_h*delta_s) and
    none may start more than max_distance behind the current position.
    """
    if len(buffer) == 0:
        return []
    ds = buffer.grid.delta_s
    window_len = cfg.l_h * ds
    newest_end = buffer.s_now - window_len
    oldest_start = max(buffer.origin, buffer.s_now - cfg.max_distance)
    # snap the oldest start up to the record grid
    k = int(np.ceil((oldest_start - buffer.origin) / ds - _GRID_TOL))
    oldest_start = buffer.origin + k * ds
    if oldest_start + window_len > newest_end + _GRID_TOL:
        return []
    count = int(np.floor((newest_end - window_len - oldest_start)
                         / cfg.window_step + _GRID_TOL)) + 1
    return [oldest_start + i * cfg.window_step for i in range(count)]


def _window_chunks(buffer: TripBuffer, cfg: SamplerConfig,
                   starts: list[float]) -> list[DataChunk]:
    trip = buffer.as_trip()
    return [make_chunk(trip, s0, cfg.l_h) for s0 in starts]


def select_primitives(buffer: TripBuffer, cfg: SamplerConfig) -> PrimitiveSet:
    """Pick p diverse windows plus the latest history chunk.

    With at most p candidates, all are taken and the newest is repeated to
    fill. Otherwise candidates are ranked by window mean slope, split into p
    equal-rank strata and the median-rank member of each stratum is chosen,
    which spreads the picks across the grade range deterministically.
    """
    starts = candidate_windows(buffer, cfg)
    if not starts:
        raise ColdStartError(
            f"no sample windows available yet (span {buffer.span:.0f} m)")
    chunks = _window_chunks(buffer, cfg, starts)

    if len(chunks) <= cfg.p:
        selected = list(chunks)
        newest = chunks[-1]
        selected.extend([newest] * (cfg.p - len(chunks)))
    else:
        mean_slope = np.array([c.values[:, THETA].mean() for c in chunks])
        order = np.argsort(mean_slope, kind="stable")
        strata = np.array_split(order, cfg.p)
        picked = sorted(int(st[(len(st) - 1) // 2]) for st in strata)
        selected = [chunks[i] for i in picked]

    history = buffer.tail_chunk(cfg.l_h)
    return PrimitiveSet(samples=tuple(selected), history=history,
                        generated_at=buffer.s_now)


def refresh_due(primitives: PrimitiveSet, s_now: float,
                cfg: SamplerConfig) -> bool:
    return s_now - primitives.generated_at >= cfg.refresh_interval
