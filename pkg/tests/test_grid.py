"""Core data layer: grids, chunks, stats, normalization, CSV ingestion."""

import math

import numpy as np
import pytest

from ecocruise.errors import ContiguityError, CoverageError, DataError
from ecocruise.grid import (DataChunk, FeatureStats, GridConfig, TripLog,
                            denormalize, fit_stats, make_chunk, normalize,
                            read_route_csv, read_trip_csv, resample_route,
                            write_route_csv, write_trip_csv)

GRID = GridConfig()


def make_trip(n=200, ds=50.0, seed=0):
    rng = np.random.default_rng(seed)
    s = ds * np.arange(1, n + 1)
    vals = np.column_stack([
        rng.uniform(15, 25, n),
        rng.uniform(-0.5, 0.5, n),
        rng.uniform(-0.05, 0.05, n),
        rng.uniform(0, 2500, n),
        rng.uniform(600, 2100, n),
        rng.uniform(0, 0.05, n),
    ])
    return TripLog(s=s, values=vals, delta_s=ds)


class TestResampleRoute:
    def test_flat_profile_zero_slope(self):
        raw = [(s, 100.0) for s in np.arange(0, 3000, 37.0)]
        profile = resample_route(raw, GRID)
        assert np.all(profile.theta == 0.0)

    def test_linear_ramp_slope(self):
        # 1 m rise per 100 m -> atan(0.01) everywhere
        raw = [(s, 100.0 + 0.01 * s) for s in np.arange(0, 5000, 100.0)]
        profile = resample_route(raw, GRID)
        assert np.allclose(profile.theta, math.atan(0.01), atol=1e-12)

    def test_sinusoid_matches_analytic_derivative(self):
        s_raw = np.arange(0, 8000, 10.0)
        z = 10.0 * np.sin(2 * np.pi * s_raw / 4000.0)
        profile = resample_route(np.column_stack([s_raw, z]), GRID)
        analytic = np.arctan(10.0 * 2 * np.pi / 4000.0
                             * np.cos(2 * np.pi * profile.s / 4000.0))
        assert np.abs(profile.theta[1:] - analytic[1:]).max() < 2e-3

    def test_non_monotone_rejected_with_index(self):
        raw = [(0.0, 1.0), (100.0, 2.0), (90.0, 3.0), (200.0, 4.0)]
        with pytest.raises(ContiguityError) as err:
            resample_route(raw, GRID)
        assert err.value.index == 2

    def test_too_few_points(self):
        with pytest.raises(DataError):
            resample_route([(0.0, 1.0)], GRID)

    def test_slope_consistency_invariant(self):
        # integrating tan(theta) * delta_s recovers the altitude curve
        rng = np.random.default_rng(7)
        s_raw = np.arange(0, 12000, 25.0)
        z = 40 * np.sin(2 * np.pi * s_raw / 5000) + 0.01 * s_raw
        profile = resample_route(np.column_stack([s_raw, z]), GRID)
        rebuilt = profile.z[0] + np.cumsum(
            np.tan(profile.theta[1:])) * GRID.delta_s
        assert np.abs(rebuilt - profile.z[1:]).max() < 1e-6 * profile.s.size
        del rng


class TestMakeChunk:
    def test_paper_shape_window(self):
        trip = make_trip(n=100)
        chunk = make_chunk(trip, 0.0, 40)
        eps = chunk.endpoints(GRID.delta_s)
        assert eps[0] == 50.0 and eps[-1] == 2000.0
        assert chunk.values.shape == (40, 6)
        assert np.array_equal(chunk.values, trip.values[:40])

    def test_unit_length(self):
        trip = make_trip(n=10)
        chunk = make_chunk(trip, 100.0, 1)
        assert chunk.length == 1
        assert np.array_equal(chunk.values[0], trip.values[2])

    def test_beyond_end_errors(self):
        trip = make_trip(n=10)
        with pytest.raises(CoverageError):
            make_chunk(trip, 600.0, 5)
        with pytest.raises(CoverageError):
            make_chunk(trip, -200.0, 3)

    def test_grid_coherence(self):
        trip = make_trip(n=60)
        for s_t in (0.0, 150.0, 500.0):
            chunk = make_chunk(trip, s_t, 10)
            eps = chunk.endpoints(GRID.delta_s)
            offsets = (eps - chunk.start_s) / GRID.delta_s
            assert np.allclose(offsets, np.arange(1, 11))


class TestStats:
    def test_direct_extrema(self):
        vals = np.zeros((5, 6))
        vals[:, 0] = [15, 18, 25, 20, 17]
        stats = fit_stats([DataChunk(0.0, vals)])
        assert stats.mins[0] == 15 and stats.maxs[0] == 25

    def test_degenerate_feature_widened(self):
        vals = np.ones((4, 6))
        vals[:, 2] = 0.0
        stats = fit_stats([DataChunk(0.0, vals)])
        assert stats.mins[2] == 0.0 and stats.maxs[2] == 1.0

    def test_two_chunks_match_brute_force(self):
        rng = np.random.default_rng(3)
        a = DataChunk(0.0, rng.normal(size=(7, 6)))
        b = DataChunk(0.0, rng.normal(size=(9, 6)))
        stats = fit_stats([a, b])
        rows = np.vstack([a.values, b.values])
        assert np.array_equal(stats.mins, rows.min(axis=0))
        assert np.array_equal(stats.maxs, rows.max(axis=0))

    def test_empty_corpus(self):
        with pytest.raises(DataError):
            fit_stats([])


class TestNormalize:
    def setup_method(self):
        self.stats = FeatureStats(
            mins=np.array([15, -1, -0.1, 0, 600, 0.0]),
            maxs=np.array([25, 1, 0.1, 2500, 2100, 0.05]))

    def test_endpoint_identities(self):
        vals = np.tile(self.stats.mins, (3, 1))
        assert np.all(normalize(DataChunk(0.0, vals), self.stats).values == 0)
        vals = np.tile(self.stats.maxs, (3, 1))
        assert np.all(normalize(DataChunk(0.0, vals), self.stats).values == 1)

    def test_hand_value(self):
        vals = np.tile(self.stats.mins, (1, 1))
        vals[0, 0] = 20.0
        out = normalize(DataChunk(0.0, vals), self.stats)
        assert out.values[0, 0] == pytest.approx(0.5, abs=1e-12)

    def test_round_trip(self):
        rng = np.random.default_rng(11)
        vals = rng.uniform(-2, 2, size=(50, 6)) * 100
        chunk = DataChunk(0.0, vals)
        back = denormalize(normalize(chunk, self.stats), self.stats)
        assert np.abs(back.values - vals).max() < 1e-9

    def test_no_clamping(self):
        vals = np.tile(self.stats.maxs * 2, (1, 1))
        out = normalize(DataChunk(0.0, vals), self.stats)
        assert np.all(out.values > 1.0)


class TestCsv:
    def test_route_round_trip(self, tmp_path):
        s = np.arange(0, 500, 25.0)
        z = 100 + np.sin(s / 100)
        path = tmp_path / "route.csv"
        write_route_csv(path, s, z)
        pts = read_route_csv(path)
        assert np.array_equal(pts[:, 0], s)
        assert np.array_equal(pts[:, 1], z)

    def test_route_bad_header(self, tmp_path):
        path = tmp_path / "route.csv"
        path.write_text("x,y\n1,2\n3,4\n")
        with pytest.raises(DataError):
            read_route_csv(path)

    def test_trip_round_trip(self, tmp_path):
        trip = make_trip(n=25)
        path = tmp_path / "trip.csv"
        write_trip_csv(path, trip)
        back = read_trip_csv(path, GRID)
        assert np.array_equal(back.s, trip.s)
        assert np.array_equal(back.values, trip.values)

    def test_trip_rejects_gap(self):
        s = np.array([50.0, 100.0, 200.0])
        with pytest.raises(ContiguityError) as err:
            TripLog(s=s, values=np.zeros((3, 6)), delta_s=50.0)
        assert err.value.index == 2
