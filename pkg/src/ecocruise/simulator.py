"""Synthetic longitudinal truck simulator with a BSFC fuel model.

Force balance: wheel force from commanded torque through a fixed drive
ratio, against aerodynamic drag, rolling resistance and grade. States are
integrated with semi-implicit Euler at a fixed time step; traces are logged
at every delta_s crossing with instantaneous speed/acceleration and
interval-averaged torque, engine speed and fuel.

There is no service brake: torque is floored at zero and downhill
overspeed simply shows up in the speed-difference cost.
"""
from __future__ import annotations

import csv
import math
from collections import namedtuple
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ColdStartError, DataError, NumericalError
from .future_sampler import FutureConfig, GRAVITY, V_FLOOR, sample_future
from .grid import GridConfig, RouteProfile, TripLog, resample_route
from .optimizer import CostWeights, optimize
from .past_sampler import SamplerConfig, TripBuffer, refresh_due, select_primitives

FUEL_DENSITY_G_PER_L = 835.0

TRACE_HEADER = ["s_m", "t_s", "v_mps", "a_mps2", "theta_rad",
                "T_nm", "S_rpm", "f_l", "f_cum_l"]

TraceRow = namedtuple("TraceRow",
                      "s t v a theta torque rpm fuel fuel_cum")


@dataclass(frozen=True)
class VehicleParams:
    """Longitudinal dynamics and engine coupling constants."""

    mass: float = 28200.0          # gross mass, kg
    cda: float = 6.0               # drag area Cd*A, m^2
    cr: float = 0.006              # rolling resistance coefficient
    rho: float = 1.225             # air density, kg/m^3
    r_wheel: float = 0.5           # wheel radius, m
    ratio: float = 3.5             # effective drive ratio
    driveline_eff: float = 0.95
    t_max: float = 2500.0          # engine torque ceiling, N*m
    s_min_rpm: float = 600.0
    s_max_rpm: float = 2100.0
    idle_fuel_lps: float = 1.1e-4  # idle fuel rate, L/s

    def __post_init__(self):
        for name in ("mass", "cda", "rho", "r_wheel", "ratio",
                     "driveline_eff", "t_max"):
            if getattr(self, name) <= 0:
                raise DataError(f"vehicle parameter {name} must be positive")


@dataclass(frozen=True)
class BsfcMap:
    """Brake-specific fuel consumption in g/kWh.

    Default is an analytic bowl around a sweet spot; a gridded map loaded
    from CSV (torque breakpoints across the header, engine-speed breakpoints
    down the first column) is interpolated bilinearly with edge clamping.
    """

    b0: float = 190.0
    b1: float = 60.0
    b2: float = 45.0
    s_opt: float = 1200.0
    t_opt: float = 1500.0
    grid_s: np.ndarray | None = None
    grid_t: np.ndarray | None = None
    grid_bsfc: np.ndarray | None = None

    def bsfc(self, rpm: float, torque: float) -> float:
        if self.grid_bsfc is not None:
            return self._bilinear(rpm, torque)
        return (self.b0
                + self.b1 * ((rpm - self.s_opt) / self.s_opt) ** 2
                + self.b2 * ((torque - self.t_opt) / self.t_opt) ** 2)

    def _bilinear(self, rpm: float, torque: float) -> float:
        ss, tt, grid = self.grid_s, self.grid_t, self.grid_bsfc
        rpm = min(max(rpm, ss[0]), ss[-1])
        torque = min(max(torque, tt[0]), tt[-1])
        i = min(max(int(np.searchsorted(ss, rpm, side="right")) - 1, 0),
                len(ss) - 2)
        j = min(max(int(np.searchsorted(tt, torque, side="right")) - 1, 0),
                len(tt) - 2)
        fs = (rpm - ss[i]) / (ss[i + 1] - ss[i])
        ft = (torque - tt[j]) / (tt[j + 1] - tt[j])
        return float((1 - fs) * (1 - ft) * grid[i, j]
                     + fs * (1 - ft) * grid[i + 1, j]
                     + (1 - fs) * ft * grid[i, j + 1]
                     + fs * ft * grid[i + 1, j + 1])

    @classmethod
    def from_csv(cls, path) -> "BsfcMap":
        path = Path(path)
        with open(path, newline="") as fh:
            rows = [row for row in csv.reader(fh) if row]
        if len(rows) < 3 or len(rows[0]) < 3:
            raise DataError(f"{path}: BSFC grid needs at least 2x2 cells")
        try:
            grid_t = np.asarray([float(x) for x in rows[0][1:]])
            grid_s = np.asarray([float(r[0]) for r in rows[1:]])
            body = np.asarray([[float(x) for x in r[1:]] for r in rows[1:]])
        except ValueError as exc:
            raise DataError(f"{path}: non-numeric BSFC cell") from exc
        if np.any(np.diff(grid_t) <= 0) or np.any(np.diff(grid_s) <= 0):
            raise DataError(f"{path}: BSFC breakpoints must increase")
        if body.shape != (grid_s.size, grid_t.size):
            raise DataError(f"{path}: BSFC body shape mismatch")
        if np.any(body <= 0):
            raise DataError(f"{path}: BSFC values must be positive")
        return cls(grid_s=grid_s, grid_t=grid_t, grid_bsfc=body)


@dataclass(frozen=True)
class SimState:
    s: float = 0.0
    v: float = 0.0
    torque: float = 0.0
    fuel: float = 0.0
    time: float = 0.0


@dataclass(frozen=True)
class Scenario:
    profile: RouteProfile
    label: str
    seed: int


@dataclass(frozen=True)
class SimTrace:
    """Closed-loop record logged every delta_s."""

    s: np.ndarray
    t: np.ndarray
    v: np.ndarray
    a: np.ndarray
    theta: np.ndarray
    torque: np.ndarray
    rpm: np.ndarray
    fuel: np.ndarray       # liters per interval
    fuel_cum: np.ndarray
    delta_s: float

    def to_trip(self) -> TripLog:
        vals = np.column_stack([self.v, self.a, self.theta,
                                self.torque, self.rpm, self.fuel])
        return TripLog(s=self.s, values=vals, delta_s=self.delta_s)

    @property
    def distance_m(self) -> float:
        return float(self.s[-1])

    @property
    def duration_s(self) -> float:
        return float(self.t[-1])

    @property
    def mean_speed(self) -> float:
        return self.distance_m / self.duration_s

    @property
    def total_fuel_l(self) -> float:
        return float(self.fuel_cum[-1])

    @property
    def fuel_per_100km(self) -> float:
        return self.total_fuel_l / self.distance_m * 1e5


def write_trace_csv(path, trace: SimTrace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_HEADER)
        for row in zip(trace.s, trace.t, trace.v, trace.a, trace.theta,
                       trace.torque, trace.rpm, trace.fuel, trace.fuel_cum):
            w.writerow([repr(float(x)) for x in row])


def read_trace_csv(path, grid: GridConfig) -> SimTrace:
    path = Path(path)
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None or [h.strip() for h in header] != TRACE_HEADER:
            raise DataError(f"{path}: expected header {','.join(TRACE_HEADER)}")
        cols = [[] for _ in TRACE_HEADER]
        for i, row in enumerate(r):
            if not row:
                continue
            if len(row) != len(TRACE_HEADER):
                raise DataError(f"{path}: trace row {i + 2} malformed")
            try:
                for c, x in zip(cols, row):
                    c.append(float(x))
            except ValueError as exc:
                raise DataError(f"{path}: bad trace row {i + 2}") from exc
    if not cols[0]:
        raise DataError(f"{path}: empty trace")
    arrays = [np.asarray(c) for c in cols]
    return SimTrace(*arrays, delta_s=grid.delta_s)


def engine_speed(v: float, params: VehicleParams) -> float:
    """Kinematic engine coupling: rpm from road speed, clamped to limits."""
    rpm = v * params.ratio / params.r_wheel * 60.0 / (2.0 * math.pi)
    return min(max(rpm, params.s_min_rpm), params.s_max_rpm)


def fuel_rate(torque: float, rpm: float, bsfc_map: BsfcMap,
              params: VehicleParams) -> float:
    """Liters per second from the BSFC surface, floored at the idle rate."""
    if torque <= 0.0:
        return params.idle_fuel_lps
    power_w = torque * rpm * 2.0 * math.pi / 60.0
    g_per_s = bsfc_map.bsfc(rpm, torque) * power_w / 3.6e6
    return max(g_per_s / FUEL_DENSITY_G_PER_L, params.idle_fuel_lps)


def acceleration(v: float, torque: float, theta: float,
                 params: VehicleParams) -> float:
    f_wheel = torque * params.ratio * params.driveline_eff / params.r_wheel
    f_aero = 0.5 * params.rho * params.cda * v * v
    f_roll = params.mass * GRAVITY * params.cr * math.cos(theta)
    f_grade = params.mass * GRAVITY * math.sin(theta)
    return (f_wheel - f_aero - f_roll - f_grade) / params.mass


def step(state: SimState, torque_cmd: float, profile: RouteProfile,
         params: VehicleParams, bsfc_map: BsfcMap, dt: float = 0.1) -> SimState:
    """One semi-implicit Euler step under a clamped torque command."""
    torque = min(max(torque_cmd, 0.0), params.t_max)
    theta = float(profile.slope_at(state.s))
    a = acceleration(state.v, torque, theta, params)
    v_next = max(state.v + a * dt, 0.0)
    s_next = state.s + v_next * dt
    rate = fuel_rate(torque, engine_speed(state.v, params), bsfc_map, params)
    return SimState(s=s_next, v=v_next, torque=torque,
                    fuel=state.fuel + rate * dt, time=state.time + dt)


class CruisePI:
    """PI speed controller with conditional-integration anti-windup."""

    def __init__(self, v_target: float, params: VehicleParams,
                 kp: float = 3000.0, ki: float = 50.0):
        self.v_target = v_target
        self.params = params
        self.kp = kp
        self.ki = ki
        self.integral = 0.0

    def torque(self, v: float, dt: float) -> float:
        err = self.v_target - v
        candidate = self.integral + self.ki * err * dt
        u = self.kp * err + candidate
        if 0.0 <= u <= self.params.t_max:
            self.integral = candidate
        else:
            u = self.kp * err + self.integral
        return min(max(u, 0.0), self.params.t_max)


class _TraceLogger:
    """Accumulates per-interval averages and emits a row at each crossing.

    Speed and fuel at a crossing are linearly apportioned within the step
    that passes it, so per-interval fuel telescopes exactly to the
    cumulative total. Acceleration is logged in the distance domain,
    a_k = (v_k^2 - v_{k-1}^2) / (2*delta_s) over the crossing speeds, the
    same convention the future sampler uses to derive a from v.
    """

    def __init__(self, profile: RouteProfile, params: VehicleParams,
                 delta_s: float, v0: float):
        self.profile = profile
        self.params = params
        self.delta_s = delta_s
        self.next_s = delta_s
        self.rows: list[TraceRow] = []
        self._last_cross_fuel = 0.0
        self._last_cross_v = v0
        self._t_int = 0.0
        self._torque_int = 0.0
        self._rpm_int = 0.0

    def observe(self, before: SimState,
                after: SimState) -> list[TraceRow]:
        rpm = engine_speed(before.v, self.params)
        crossed = []
        t0, s0, v0, f0 = before.time, before.s, before.v, before.fuel
        while after.s >= self.next_s - 1e-9 and s0 < after.s - 1e-12:
            alpha = (self.next_s - s0) / (after.s - s0)
            t_cross = t0 + alpha * (after.time - t0)
            v_cross = v0 + alpha * (after.v - v0)
            f_cross = f0 + alpha * (after.fuel - f0)
            seg = t_cross - t0
            self._t_int += seg
            self._torque_int += after.torque * seg
            self._rpm_int += rpm * seg
            theta = float(self.profile.slope_at(self.next_s))
            a_dist = ((v_cross ** 2 - self._last_cross_v ** 2)
                      / (2.0 * self.delta_s))
            row = TraceRow(s=self.next_s, t=t_cross, v=v_cross, a=a_dist,
                           theta=theta,
                           torque=self._torque_int / self._t_int,
                           rpm=self._rpm_int / self._t_int,
                           fuel=f_cross - self._last_cross_fuel,
                           fuel_cum=f_cross)
            self.rows.append(row)
            crossed.append(row)
            self._last_cross_fuel = f_cross
            self._last_cross_v = v_cross
            self._t_int = self._torque_int = self._rpm_int = 0.0
            t0, s0, v0, f0 = t_cross, self.next_s, v_cross, f_cross
            self.next_s += self.delta_s
        seg = after.time - t0
        self._t_int += seg
        self._torque_int += after.torque * seg
        self._rpm_int += rpm * seg
        return crossed

    def trace(self) -> SimTrace:
        if not self.rows:
            raise DataError("no trace rows recorded")
        cols = list(zip(*self.rows))
        arrays = [np.asarray(c, dtype=np.float64) for c in cols]
        return SimTrace(*arrays, delta_s=self.delta_s)


def _drive(profile: RouteProfile, params: VehicleParams, bsfc_map: BsfcMap,
           grid: GridConfig, torque_fn, end_s: float, v0: float,
           dt: float, on_crossing=None, max_time: float = 36000.0) -> SimTrace:
    """Shared closed-loop engine.

    torque_fn(state, dt) -> torque command, called every step;
    on_crossing(row) runs at every grid crossing before the drive ends.
    """
    state = SimState(s=0.0, v=v0)
    logger = _TraceLogger(profile, params, grid.delta_s, v0=v0)
    while state.s < end_s - 1e-9:
        if state.time > max_time:
            raise NumericalError("simulation exceeded max_time; stalled?")
        cmd = torque_fn(state, dt)
        nxt = step(state, cmd, profile, params, bsfc_map, dt)
        for row in logger.observe(state, nxt):
            if on_crossing is not None and row.s < end_s - 1e-9:
                on_crossing(row)
        state = nxt
    return logger.trace()


def run_cruise(scenario: Scenario, v_target: float, params: VehicleParams,
               bsfc_map: BsfcMap, grid: GridConfig, dt: float = 0.1,
               drive_length: float = 10000.0, target_fn=None) -> SimTrace:
    """Constant-speed PI cruise baseline (optionally with a wandering target)."""
    pi = CruisePI(v_target, params)

    def torque_fn(state: SimState, dt_step: float) -> float:
        if target_fn is not None:
            pi.v_target = target_fn(state.time)
        return pi.torque(state.v, dt_step)

    return _drive(scenario.profile, params, bsfc_map, grid, torque_fn,
                  drive_length, v0=v_target, dt=dt)


def run_npc(scenario: Scenario, model, grid: GridConfig,
            sampler_cfg: SamplerConfig, future_cfg: FutureConfig,
            weights: CostWeights, params: VehicleParams, bsfc_map: BsfcMap,
            dt: float = 0.1, drive_length: float = 10000.0) -> SimTrace:
    """Receding-horizon neural cruise: replan at every grid crossing.

    Until the first primitive set exists (or if the horizon ever leaves the
    map) the PI cruise law takes over. After each replan the first torque of
    the chosen plan is held until the next crossing.
    """
    if model is None:
        raise DataError("run_npc needs a trained model")
    sampler_cfg.validate(grid)
    profile = scenario.profile
    pi = CruisePI(future_cfg.v_target, params)
    buffer = TripBuffer(grid)
    ctx = {"primitives": None, "cmd": None}

    def on_crossing(row: TraceRow):
        buffer.append(row.s, np.array([row.v, row.a, row.theta,
                                       row.torque, row.rpm, row.fuel]))
        prim = ctx["primitives"]
        if prim is None or refresh_due(prim, row.s, sampler_cfg):
            try:
                prim = select_primitives(buffer, sampler_cfg)
            except ColdStartError:
                prim = None
            ctx["primitives"] = prim
        horizon_end = row.s + (future_cfg.l_f + 1) * grid.delta_s
        if prim is None or not profile.covers(row.s, horizon_end):
            ctx["cmd"] = None
            return
        candidates = sample_future(profile, row.s, max(row.v, V_FLOOR),
                                   future_cfg, grid)
        plan = optimize(prim.history, prim, candidates, model, weights)
        ctx["cmd"] = float(plan.torque[0])

    def torque_fn(state: SimState, dt_step: float) -> float:
        if ctx["cmd"] is not None:
            return ctx["cmd"]
        return pi.torque(state.v, dt_step)

    return _drive(profile, params, bsfc_map, grid, torque_fn, drive_length,
                  v0=future_cfg.v_target, dt=dt, on_crossing=on_crossing)


def generate_scenarios(n: int = 15, seed: int = 0,
                       grid: GridConfig | None = None,
                       drive_length: float = 10000.0,
                       horizon_m: float = 3000.0) -> list[Scenario]:
    """Deterministic scenario family: flat, grades, hills, undulating roads.

    Profiles extend one horizon (plus margin) past the drive length so the
    future sampler always sees a full map. Slopes stay within +-6 percent.
    """
    if grid is None:
        grid = GridConfig()
    rng = np.random.default_rng(seed)
    total = drive_length + horizon_m + 200.0
    s_raw = np.arange(0.0, total + 10.0, 10.0)
    scenarios: list[Scenario] = []

    def finish(z, label):
        dz = np.diff(z) / np.diff(s_raw)
        cap = math.tan(0.0599)
        peak = float(np.abs(dz).max())
        if peak > cap:
            mid = z.mean()
            z = mid + (z - mid) * (cap / peak)
        profile = resample_route(np.column_stack([s_raw, z]), grid)
        scenarios.append(Scenario(profile=profile, label=label, seed=seed))

    def hill(r, sign):
        h = r.uniform(18.0, 35.0) * sign
        center = r.uniform(0.35, 0.6) * total
        width = r.uniform(1200.0, 2000.0)
        return 150.0 + h * np.exp(-0.5 * ((s_raw - center) / width) ** 2)

    def undulating(r):
        z = np.full_like(s_raw, 150.0)
        for _ in range(int(r.integers(2, 5))):
            lam = r.uniform(1000.0, 5000.0)
            amp = r.uniform(5.0, 40.0)
            phase = r.uniform(0.0, 2.0 * math.pi)
            z = z + amp * np.sin(2.0 * math.pi * s_raw / lam + phase)
        return z

    kinds = [
        ("flat", lambda r: np.full_like(s_raw, 100.0)),
        ("grade_up_2pct", lambda r: 100.0 + 0.02 * s_raw),
        ("grade_down_2pct", lambda r: 400.0 - 0.02 * s_raw),
        ("grade_up_4pct", lambda r: 100.0 + 0.04 * s_raw),
        ("hill_up", lambda r: hill(r, +1)),
        ("hill_down", lambda r: hill(r, -1)),
    ]

    for i in range(n):
        if i < len(kinds):
            label, maker = kinds[i]
            finish(maker(rng), label)
        else:
            finish(undulating(rng), f"undulating_{i - len(kinds) + 1:02d}")
    return scenarios


@dataclass(frozen=True)
class DriverParams:
    """Synthetic-corpus driving variety."""

    n_trips: int = 30
    v_target_lo: float = 17.0
    v_target_hi: float = 24.0
    mass_jitter: float = 0.2      # +-20 percent per trip
    noise_sigma: float = 0.8      # target wander amplitude, m/s
    noise_tau: float = 40.0       # target wander time constant, s
    clean_trip_every: int = 3     # every k-th trip holds its target exactly


def synth_trips(scenarios: list[Scenario], driver: DriverParams, seed: int,
                params: VehicleParams, bsfc_map: BsfcMap, grid: GridConfig,
                dt: float = 0.1) -> list[TripLog]:
    """Training corpus: PI cruise runs with varied targets, masses and wander."""
    rng = np.random.default_rng(seed)
    trips = []
    for i in range(driver.n_trips):
        scenario = scenarios[i % len(scenarios)]
        v_t = float(rng.uniform(driver.v_target_lo, driver.v_target_hi))
        mass = params.mass * (1.0 + rng.uniform(-driver.mass_jitter,
                                                driver.mass_jitter))
        trip_params = replace(params, mass=float(mass))
        trip_rng = np.random.default_rng(int(rng.integers(0, 2 ** 63)))
        clean = (driver.clean_trip_every > 0
                 and i % driver.clean_trip_every == 0)
        sigma = 0.0 if clean else driver.noise_sigma
        wander = {"x": 0.0, "t": 0.0}

        def target_fn(t, _v=v_t, _w=wander, _r=trip_rng, _sig=sigma):
            while _w["t"] < t - 1e-12:
                dw = _r.standard_normal()
                _w["x"] += (-_w["x"] / driver.noise_tau * dt
                            + _sig * math.sqrt(2.0 * dt / driver.noise_tau)
                            * dw)
                _w["t"] += dt
            return min(max(_v + _w["x"], 15.0), 25.0)

        end = scenario.profile.end_s - grid.delta_s
        trace = run_cruise(scenario, v_t, trip_params, bsfc_map, grid, dt=dt,
                           drive_length=end, target_fn=target_fn)
        trips.append(trace.to_trip())
    return trips
