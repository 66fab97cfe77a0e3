"""Fuel-saving candidate selection.

Every candidate future chunk is completed with model predictions for
torque, engine speed and fuel, scored by a weighted sum of total predicted
fuel and the gap between mean sampled speed and the target, and the
cheapest candidate's torque and engine-speed sequences are returned.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .future_sampler import FutureChunkSet
from .grid import DataChunk, F, S, T, V, normalize_values
from .past_sampler import PrimitiveSet


@dataclass(frozen=True)
class CostWeights:
    """Eq-style weighting: fuel dominates, speed keeps schedule."""

    w1: float = 1.0
    w2: float = 0.1
    v_target: float = 21.5

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0:
            raise DataError("cost weights must be nonnegative")


@dataclass(frozen=True)
class ControlPlan:
    """Winning torque/engine-speed sequences plus the full cost vector."""

    torque: np.ndarray
    rpm: np.ndarray
    cost: float
    index: int
    costs: np.ndarray


def chunk_cost(chunk: DataChunk, weights: CostWeights) -> float:
    """w1 * total fuel + w2 * |mean speed - target|, on denormalized values.

    Any non-finite prediction disqualifies the candidate with an infinite
    cost; a broken prediction must never drive the truck.
    """
    vals = chunk.values
    if not np.isfinite(vals).all():
        return math.inf
    total_fuel = float(vals[:, F].sum())
    v_mean = float(vals[:, V].mean())
    return weights.w1 * total_fuel + weights.w2 * abs(v_mean - weights.v_target)


def optimize(history: DataChunk, primitives: PrimitiveSet,
             candidates: FutureChunkSet, model,
             weights: CostWeights) -> ControlPlan:
    """Score all candidates with the model and return the cheapest plan.

    Inputs are normalized with the model's training stats, predictions are
    denormalized before costing, and ties break toward the lowest candidate
    index (first strict minimum wins).
    """
    if len(candidates) == 0:
        raise DataError("no candidate future chunks to optimize over")
    stats = model.stats
    m_f = model.config.m_f
    prim_norm = np.stack([normalize_values(c.values, stats)
                          for c in primitives.samples])
    hist_norm = normalize_values(history.values, stats)
    futures_norm = np.stack([normalize_values(c.values, stats)[:, :m_f]
                             for c in candidates.chunks])

    preds_norm = model.predict_norm(prim_norm, hist_norm, futures_norm)
    preds_norm = np.asarray(preds_norm, dtype=np.float64)
    if preds_norm.shape != (len(candidates), candidates.chunks[0].length,
                            len(stats.mins) - m_f):
        raise DataError(f"model returned bad prediction shape {preds_norm.shape}")

    costs = np.empty(len(candidates))
    completed = []
    for i, cand in enumerate(candidates.chunks):
        vals = np.array(cand.values)
        vals[:, m_f:] = (preds_norm[i] * stats.spans[m_f:]
                         + stats.mins[m_f:])
        done = cand.with_values(vals)
        completed.append(done)
        costs[i] = chunk_cost(done, weights)

    best = int(np.argmin(costs))  # first occurrence wins on ties
    if not math.isfinite(costs[best]):
        raise DataError("all candidates disqualified (non-finite predictions)")
    vals = completed[best].values
    return ControlPlan(torque=vals[:, T].copy(), rpm=vals[:, S].copy(),
                       cost=float(costs[best]), index=best, costs=costs)
