"""Closed-loop evaluation protocol and prediction metrics.

Each (method, scenario) pair is simulated at six target speeds; fuel per
100 km is fitted with a least-squares quadratic over the targets and read
off at 21.5 m/s, combined with the mean speed difference into the weighted
cost, and compared against the cruise baseline as a saving percentage.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .simulator import SimTrace

TARGET_SPEEDS = (19.44, 20.28, 21.11, 21.94, 22.78, 23.61)
EVAL_SPEED = 21.5
W1, W2 = 1.0, 0.1
BASELINE_METHOD = "cruise"


def mae_mse(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    """Mean absolute and mean squared error per feature column."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DataError(f"length mismatch {pred.shape} vs {truth.shape}")
    if pred.ndim == 1:
        pred, truth = pred[:, None], truth[:, None]
    err = pred - truth
    return np.abs(err).mean(axis=0), (err ** 2).mean(axis=0)


def interpolate_fuel_at(points, v_query: float = EVAL_SPEED) -> float:
    """Least-squares quadratic over (target speed, fuel) pairs at v_query.

    Needs at least three points and the query inside the sampled speed
    range; extrapolation is refused.
    """
    pts = np.asarray(list(points), dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
        raise DataError("need at least 3 (speed, fuel) points")
    v, f = pts[:, 0], pts[:, 1]
    if not (v.min() <= v_query <= v.max()):
        raise DataError(f"query speed {v_query} outside sampled range "
                        f"[{v.min()}, {v.max()}]")
    coeffs = np.polyfit(v, f, 2)
    return float(np.polyval(coeffs, v_query))


def sim_cost(fuel_per_100km: float, speed_diff: float,
             w1: float = W1, w2: float = W2) -> float:
    if fuel_per_100km < 0 or speed_diff < 0:
        raise DataError("cost inputs must be nonnegative")
    return w1 * fuel_per_100km + w2 * speed_diff


def fuel_saving(baseline_fuel: float, method_fuel: float) -> float:
    """Positive percentage when the method burns less than the baseline."""
    if baseline_fuel <= 0:
        raise DataError("baseline fuel must be positive")
    return 100.0 * (baseline_fuel - method_fuel) / baseline_fuel


@dataclass(frozen=True)
class RunRecord:
    """One simulated run, reduced to the numbers evaluation needs."""

    method: str
    scenario: str
    v_target: float
    fuel_per_100km: float
    mean_speed: float
    trace_path: str = ""

    @property
    def speed_diff(self) -> float:
        return abs(self.mean_speed - self.v_target)

    def to_dict(self) -> dict:
        return {"method": self.method, "scenario": self.scenario,
                "v_target": self.v_target,
                "fuel_per_100km": self.fuel_per_100km,
                "mean_speed": self.mean_speed,
                "speed_diff": self.speed_diff,
                "trace_path": self.trace_path}


def record_from_trace(method: str, scenario: str, v_target: float,
                      trace: SimTrace, trace_path: str = "") -> RunRecord:
    return RunRecord(method=method, scenario=scenario, v_target=v_target,
                     fuel_per_100km=trace.fuel_per_100km,
                     mean_speed=trace.mean_speed, trace_path=trace_path)


def evaluate_runs(records: list[RunRecord],
                  v_eval: float = EVAL_SPEED) -> dict:
    """Aggregate runs into per-scenario and per-method results.

    With three or more targets spanning v_eval the fuel figure comes from
    the quadratic fit; with a single matched target it is taken directly.
    The speed difference is averaged over the runs of the pair.
    """
    if not records:
        raise DataError("no runs to evaluate")
    pairs: dict[tuple[str, str], list[RunRecord]] = {}
    for r in records:
        pairs.setdefault((r.method, r.scenario), []).append(r)

    per_scenario = []
    for (method, scenario), runs in sorted(pairs.items()):
        runs = sorted(runs, key=lambda r: r.v_target)
        points = [(r.v_target, r.fuel_per_100km) for r in runs]
        if len(runs) >= 3 and runs[0].v_target <= v_eval <= runs[-1].v_target:
            fuel = interpolate_fuel_at(points, v_eval)
        else:
            matched = [r for r in runs if abs(r.v_target - v_eval) < 1e-9]
            if not matched:
                raise DataError(
                    f"{method}/{scenario}: cannot estimate fuel at {v_eval}; "
                    "need >=3 spanning targets or one matched run")
            fuel = matched[0].fuel_per_100km
        dv = float(np.mean([r.speed_diff for r in runs]))
        per_scenario.append({
            "method": method, "scenario": scenario,
            "fuel_per_100km": fuel, "speed_diff": dv,
            "cost": sim_cost(fuel, dv), "n_targets": len(runs),
        })

    methods = sorted({row["method"] for row in per_scenario})
    per_method = []
    base_fuel = None
    for method in methods:
        rows = [r for r in per_scenario if r["method"] == method]
        fuel = float(np.mean([r["fuel_per_100km"] for r in rows]))
        dv = float(np.mean([r["speed_diff"] for r in rows]))
        entry = {"method": method, "fuel_per_100km": fuel, "speed_diff": dv,
                 "cost": sim_cost(fuel, dv), "n_scenarios": len(rows)}
        per_method.append(entry)
        if method == BASELINE_METHOD:
            base_fuel = fuel
    for entry in per_method:
        if base_fuel is not None and entry["method"] != BASELINE_METHOD:
            entry["fuel_saving_pct"] = fuel_saving(base_fuel,
                                                   entry["fuel_per_100km"])
        else:
            entry["fuel_saving_pct"] = 0.0 if base_fuel is not None else None

    return {
        "v_eval": v_eval,
        "baseline": BASELINE_METHOD if base_fuel is not None else None,
        "per_scenario": per_scenario,
        "per_method": per_method,
        "runs": [r.to_dict() for r in
                 sorted(records, key=lambda r: (r.method, r.scenario,
                                                r.v_target))],
    }
