"""Anchor detection, speed bounds, series enumeration and chunk assembly."""

import math

import numpy as np
import pytest

from ecocruise.errors import DataError
from ecocruise.future_sampler import (FutureConfig, KeyPoint, SpeedSeries,
                                      V_CEIL, V_FLOOR, assemble_future_chunks,
                                      build_key_points, detect_anchors,
                                      enumerate_series, interpolate_series,
                                      reference_speed_line, sample_future)
from ecocruise.grid import A, F, GridConfig, S, T, THETA, V, resample_route

GRID = GridConfig()
DS = GRID.delta_s


def profile_from(fn, length_m, step=10.0):
    s = np.arange(0.0, length_m + step, step)
    return resample_route(np.column_stack([s, fn(s)]), GRID)


def gentle_random_profile(rng, length_m=20_000.0):
    """Curvature low enough that every discrete extremum passes the
    epsilon=1e-3 slope test at 50 m resolution (sum A*(2pi/lam)^2/2*ds < 1e-3)."""
    n_waves = int(rng.integers(2, 4))
    amps = rng.uniform(3.0, 10.0, n_waves)
    lams = rng.uniform(6000.0, 12_000.0, n_waves)
    phases = rng.uniform(0, 2 * np.pi, n_waves)
    trend = rng.uniform(-5e-4, 5e-4)

    def fn(s):
        z = 200.0 + trend * s
        for a, lam, ph in zip(amps, lams, phases):
            z = z + a * np.sin(2 * np.pi * s / lam + ph)
        return z

    return profile_from(fn, length_m)


def brute_force_extrema(z):
    """Strict local extrema of the gridded altitude, skipping the ends."""
    idx = []
    for k in range(1, len(z) - 1):
        if (z[k] > z[k - 1] and z[k] > z[k + 1]) or \
           (z[k] < z[k - 1] and z[k] < z[k + 1]):
            idx.append(k)
    return idx


class TestDetectAnchors:
    def test_sinusoid_max_and_min(self):
        profile = profile_from(
            lambda s: 10.0 * np.sin(2 * np.pi * s / 4000.0), 4000.0)
        cfg = FutureConfig(l_f=60, epsilon=1e-3, v_target=21.5)
        anchors = detect_anchors(profile, 0.0, cfg, GRID)
        assert [a.s for a in anchors] == [1000.0, 3000.0]

    def test_monotone_ramp_none(self):
        profile = profile_from(lambda s: 100.0 + 0.01 * s, 4000.0)
        cfg = FutureConfig(v_target=21.5)
        assert detect_anchors(profile, 0.0, cfg, GRID) == []

    def test_flat_road_none_despite_small_slope(self):
        profile = profile_from(lambda s: np.full_like(s, 100.0), 4000.0)
        cfg = FutureConfig(v_target=21.5)
        assert detect_anchors(profile, 0.0, cfg, GRID) == []

    def test_matches_brute_force_on_random_profiles(self):
        cfg = FutureConfig(epsilon=1e-3, v_target=21.5)
        rng = np.random.default_rng(42)
        for _ in range(100):
            profile = gentle_random_profile(rng)
            l_f = profile.s.size - 2
            scan_cfg = FutureConfig(l_f=l_f, epsilon=1e-3, v_target=21.5)
            anchors = detect_anchors(profile, float(profile.s[0]), scan_cfg,
                                     GRID)
            got = sorted(int(round(a.s / DS)) for a in anchors)
            want = brute_force_extrema(profile.z)
            assert got == want
        del cfg

    def test_requires_coverage(self):
        profile = profile_from(lambda s: np.full_like(s, 1.0), 1000.0)
        with pytest.raises(DataError):
            detect_anchors(profile, 0.0, FutureConfig(l_f=60, v_target=20),
                           GRID)


class TestReferenceSpeedLine:
    def test_flat_keeps_speed(self):
        profile = profile_from(lambda s: np.full_like(s, 50.0), 4000.0)
        v = reference_speed_line(21.5, profile, 0.0, [1000.0, 2000.0])
        assert np.allclose(v, 21.5)

    def test_climb_energy_exchange(self):
        profile = profile_from(lambda s: 100.0 + s * (10.0 / 3000.0), 3100.0)
        v = float(reference_speed_line(21.5, profile, 0.0, 3000.0))
        assert v == pytest.approx(math.sqrt(21.5 ** 2 - 2 * 9.81 * 10.0),
                                  abs=1e-6)

    def test_descent_clamped(self):
        profile = profile_from(lambda s: 130.0 - s * (30.0 / 3000.0), 3100.0)
        v = float(reference_speed_line(21.5, profile, 0.0, 3000.0))
        assert v == V_CEIL

    def test_floor(self):
        profile = profile_from(lambda s: 100.0 + s * 0.05, 4100.0)
        v = float(reference_speed_line(6.0, profile, 0.0, 4000.0))
        assert v == V_FLOOR


class TestKeyPoints:
    def setup_method(self):
        self.flat = profile_from(lambda s: np.full_like(s, 80.0), 4000.0)

    def test_bound_from_reference_line(self):
        cfg = FutureConfig(l_f=60, v_d=1.0, v_target=21.5)
        anchors = [KeyPoint(s=1000.0, kind="anchor")]
        pts = build_key_points(21.0, anchors, self.flat, 0.0, cfg, GRID)
        assert pts[1].speed_bound == (20.0, 22.0)

    def test_zero_anchors_degenerate(self):
        cfg = FutureConfig(l_f=60, v_target=21.5)
        pts = build_key_points(20.0, [], self.flat, 0.0, cfg, GRID)
        assert [p.kind for p in pts] == ["start", "end"]
        assert len(enumerate_series(pts, cfg)) == 1

    def test_third_anchor_collapses_to_target(self):
        cfg = FutureConfig(l_f=60, v_d=1.5, v_target=21.5)
        anchors = [KeyPoint(s=500.0, kind="anchor"),
                   KeyPoint(s=1500.0, kind="anchor"),
                   KeyPoint(s=2500.0, kind="anchor")]
        pts = build_key_points(21.0, anchors, self.flat, 0.0, cfg, GRID)
        assert pts[1].bounded and pts[2].bounded
        assert pts[3].speed_bound == (21.5, 21.5)
        assert pts[-1].speed_bound == (21.5, 21.5)

    def test_anchor_at_horizon_end_absorbed(self):
        cfg = FutureConfig(l_f=60, v_target=21.5)
        anchors = [KeyPoint(s=60 * DS, kind="anchor")]
        pts = build_key_points(21.0, anchors, self.flat, 0.0, cfg, GRID)
        assert [p.kind for p in pts] == ["start", "end"]


class TestEnumerateSeries:
    def make_points(self, bounds):
        pts = [KeyPoint(s=0.0, kind="start", speed_bound=(21.0, 21.0))]
        for i, b in enumerate(bounds):
            pts.append(KeyPoint(s=500.0 * (i + 1), kind="anchor",
                                speed_bound=b))
        pts.append(KeyPoint(s=3000.0, kind="end", speed_bound=(21.5, 21.5)))
        return pts

    def test_two_bounded_gives_x_squared(self):
        cfg = FutureConfig(x=3, v_target=21.5)
        series = enumerate_series(
            self.make_points([(20.0, 22.0), (19.0, 21.0)]), cfg)
        assert len(series) == 9
        assert {(sr.i, sr.j) for sr in series} == {(i, j) for i in range(3)
                                                  for j in range(3)}

    def test_x_one_midpoint(self):
        cfg = FutureConfig(x=1, v_target=21.5)
        series = enumerate_series(self.make_points([(20.0, 22.0)]), cfg)
        assert len(series) == 1
        assert series[0].speeds[1] == 21.0

    def test_even_division_includes_ends(self):
        cfg = FutureConfig(x=3, v_target=21.5)
        series = enumerate_series(self.make_points([(20.0, 22.0)]), cfg)
        assert sorted(sr.speeds[1] for sr in series) == [20.0, 21.0, 22.0]

    def test_count_is_one_x_or_x_squared(self):
        for bounds, expect in ([[], 1],
                               [[(20.0, 22.0)], 5],
                               [[(20.0, 22.0), (19.0, 21.0)], 25]):
            cfg = FutureConfig(x=5, v_target=21.5)
            assert len(enumerate_series(self.make_points(bounds), cfg)) == expect


class TestInterpolate:
    def make(self, speeds, svals=(0.0, 1000.0, 3000.0)):
        kinds = ["start"] + ["anchor"] * (len(svals) - 2) + ["end"]
        pts = [KeyPoint(s=s, kind=k, speed_bound=(v, v))
               for s, k, v in zip(svals, kinds, speeds)]
        return pts, SpeedSeries(speeds=tuple(speeds), i=0, j=0)

    def test_linear_midpoint(self):
        cfg = FutureConfig(l_f=60, v_target=21.5)
        pts, sr = self.make([20.0, 22.0, 21.5])
        out = interpolate_series(sr, pts, cfg, GRID)
        assert out[9] == pytest.approx(21.0, abs=1e-12)  # s_u = 500

    def test_endpoint_identity(self):
        cfg = FutureConfig(l_f=60, v_target=21.5)
        pts, sr = self.make([20.0, 22.0, 21.5])
        assert out_at(out := interpolate_series(sr, pts, cfg, GRID), 1000) == 22.0
        assert out[-1] == 21.5

    def test_quarter_point(self):
        cfg = FutureConfig(l_f=60, v_target=21.5)
        pts, sr = self.make([20.0, 22.0, 21.5])
        out = interpolate_series(sr, pts, cfg, GRID)
        assert out[4] == pytest.approx(20.5, abs=1e-12)  # s_u = 250

    def test_convexity_invariant(self):
        rng = np.random.default_rng(3)
        cfg = FutureConfig(l_f=60, v_target=21.5)
        for _ in range(50):
            speeds = list(rng.uniform(6, 25, 3))
            pts, sr = self.make(speeds)
            out = interpolate_series(sr, pts, cfg, GRID)
            for u in range(1, 61):
                s_u = u * DS
                k = 0 if s_u <= 1000 else 1
                lo = min(speeds[k], speeds[k + 1]) - 1e-12
                hi = max(speeds[k], speeds[k + 1]) + 1e-12
                assert lo <= out[u - 1] <= hi

    def test_coincident_points_distinct_speeds_rejected(self):
        cfg = FutureConfig(l_f=60, v_target=21.5)
        pts, sr = self.make([20.0, 22.0, 21.5], svals=(0.0, 1000.0, 1000.0))
        pts.append(KeyPoint(s=3000.0, kind="end", speed_bound=(21.5, 21.5)))
        sr = SpeedSeries(speeds=sr.speeds + (21.5,), i=0, j=0)
        with pytest.raises(DataError):
            interpolate_series(sr, pts, cfg, GRID)


def out_at(out, s_u):
    return out[int(round(s_u / DS)) - 1]


class TestAssemble:
    def test_constant_speed_zero_accel(self):
        profile = profile_from(lambda s: np.full_like(s, 90.0), 4000.0)
        cfg = FutureConfig(l_f=60, v_target=21.5)
        speeds = [np.full(60, 21.5)]
        series = [SpeedSeries(speeds=(21.5,), i=0, j=0)]
        chunks = assemble_future_chunks(speeds, series, profile, 0.0, 21.5,
                                        cfg, GRID)
        assert np.all(chunks.chunks[0].values[:, A] == 0.0)

    def test_kinematic_identity(self):
        profile = profile_from(lambda s: np.full_like(s, 90.0), 4000.0)
        cfg = FutureConfig(l_f=60, v_target=21.5)
        v = np.full(60, 20.0)
        v[0] = 21.0
        chunks = assemble_future_chunks(
            [v], [SpeedSeries(speeds=(), i=0, j=0)], profile, 0.0, 20.0,
            cfg, GRID)
        a = chunks.chunks[0].values[:, A]
        assert a[0] == pytest.approx((21.0 ** 2 - 20.0 ** 2) / (2 * DS),
                                     abs=1e-12)
        assert a[0] == pytest.approx(0.41, abs=1e-12)

    def test_reintegration_recovers_speeds(self):
        rng = np.random.default_rng(8)
        profile = profile_from(lambda s: 90.0 + 0.01 * s, 4000.0)
        cfg = FutureConfig(l_f=60, v_target=21.5)
        v = rng.uniform(10, 25, 60)
        v0 = 18.0
        chunks = assemble_future_chunks(
            [v], [SpeedSeries(speeds=(), i=0, j=0)], profile, 0.0, v0,
            cfg, GRID)
        a = chunks.chunks[0].values[:, A]
        rebuilt = np.empty(60)
        prev = v0
        for u in range(60):
            prev = math.sqrt(prev ** 2 + 2 * a[u] * DS)
            rebuilt[u] = prev
        assert np.abs(rebuilt - v).max() < 1e-9

    def test_unknown_columns_zero_and_theta_from_map(self):
        profile = profile_from(lambda s: 90.0 + 0.02 * s, 4000.0)
        cfg = FutureConfig(l_f=60, v_target=21.5)
        fc = sample_future(profile, 0.0, 21.5, cfg, GRID)
        for chunk in fc.chunks:
            vals = chunk.values
            assert np.all(vals[:, T] == 0.0)
            assert np.all(vals[:, S] == 0.0)
            assert np.all(vals[:, F] == 0.0)
            eps = chunk.endpoints(DS)
            assert np.allclose(vals[:, THETA], profile.slope_at(eps))

    def test_candidate_count_on_hilly_profile(self):
        profile = profile_from(
            lambda s: 20.0 * np.sin(2 * np.pi * s / 2500.0 + 0.3), 4000.0)
        cfg = FutureConfig(l_f=60, x=4, epsilon=0.02, v_target=21.5)
        fc = sample_future(profile, 0.0, 21.5, cfg, GRID)
        assert len(fc) in (1, 4, 16)
        assert len(fc) == 16  # two extrema inside 3 km
