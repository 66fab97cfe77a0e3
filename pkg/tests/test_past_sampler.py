"""Trip buffer, sliding-window candidates and primitive selection."""

import numpy as np
import pytest

from ecocruise.errors import ColdStartError, ContiguityError, DataError
from ecocruise.grid import GridConfig, THETA
from ecocruise.past_sampler import (PrimitiveSet, SamplerConfig, TripBuffer,
                                    candidate_windows, refresh_due,
                                    select_primitives)

GRID = GridConfig()
DS = GRID.delta_s


def fill_buffer(span_m, seed=0, slope_fn=None):
    """Buffer with records at DS..span_m."""
    rng = np.random.default_rng(seed)
    buf = TripBuffer(GRID)
    n = int(round(span_m / DS))
    for k in range(1, n + 1):
        s = k * DS
        theta = slope_fn(s) if slope_fn else rng.uniform(-0.05, 0.05)
        row = np.array([20.0, 0.0, theta, 800.0, 1400.0, 0.012])
        buf.append(s, row)
    return buf


class TestAppend:
    def test_bootstrap(self):
        buf = TripBuffer(GRID)
        buf.append(DS, np.array([20, 0, 0, 500, 1400, 0.01]))
        assert buf.s_now == DS
        assert buf.origin == 0.0

    def test_gap_rejected(self):
        buf = fill_buffer(500)
        with pytest.raises(ContiguityError):
            buf.append(buf.s_now + 2 * DS, np.zeros(6))

    def test_regression_rejected(self):
        buf = fill_buffer(500)
        with pytest.raises(ContiguityError):
            buf.append(buf.s_now - DS, np.zeros(6))

    def test_replay_makes_chunk(self):
        buf = fill_buffer(40 * DS)
        chunk = buf.tail_chunk(40)
        assert chunk.length == 40
        assert chunk.endpoints(DS)[-1] == buf.s_now


class TestCandidateWindows:
    def setup_method(self):
        self.cfg = SamplerConfig()

    def test_ten_km_buffer(self):
        # newest window must end before the latest history chunk: with 10 km
        # of records and 2 km windows at 1 km steps that leaves starts 0..6 km
        buf = fill_buffer(10_000)
        starts = candidate_windows(buf, self.cfg)
        assert starts == [1000.0 * k for k in range(7)]

    def test_minimal_buffer_for_one_candidate(self):
        # one window and one non-overlapping history need 2 * l_h * ds
        need = 2 * self.cfg.l_h * DS
        assert candidate_windows(fill_buffer(need - DS), self.cfg) == []
        starts = candidate_windows(fill_buffer(need), self.cfg)
        assert starts == [0.0]

    def test_lookback_limit(self):
        buf = fill_buffer(150_000)
        starts = candidate_windows(buf, self.cfg)
        assert starts[0] == buf.s_now - self.cfg.max_distance
        assert starts[-1] + self.cfg.l_h * DS <= buf.s_now - self.cfg.l_h * DS

    def test_count_formula_on_random_lengths(self):
        # brute-force enumeration oracle vs the closed-form count
        rng = np.random.default_rng(5)
        for _ in range(25):
            span = float(rng.integers(30, 400)) * DS
            buf = fill_buffer(span, seed=int(rng.integers(1e6)))
            cfg = SamplerConfig(l_h=int(rng.integers(4, 20)),
                                window_step=float(rng.integers(1, 8)) * DS,
                                max_distance=float(rng.integers(40, 300)) * DS)
            window_len = cfg.l_h * DS
            newest_end = buf.s_now - window_len
            oldest = max(buf.origin, buf.s_now - cfg.max_distance)
            brute = 0
            start = oldest
            while start + window_len <= newest_end + 1e-9:
                brute += 1
                start += cfg.window_step
            usable = newest_end - oldest
            formula = (int(np.floor((usable - window_len) / cfg.window_step
                                    + 1e-9)) + 1 if usable >= window_len else 0)
            got = candidate_windows(buf, cfg)
            assert len(got) == brute == formula

    def test_empty_buffer(self):
        assert candidate_windows(TripBuffer(GRID), self.cfg) == []


class TestSelectPrimitives:
    def test_exact_fit_takes_all(self):
        cfg = SamplerConfig(p=7)
        # 7 candidates: usable span = 7 km + window -> span = l_h*ds + 2km + 6km
        buf = fill_buffer(2 * cfg.l_h * DS + 6 * cfg.window_step)
        starts = candidate_windows(buf, cfg)
        assert len(starts) == 7
        prim = select_primitives(buf, cfg)
        assert [c.start_s for c in prim.samples] == starts

    def test_padding_repeats_newest(self):
        cfg = SamplerConfig(p=10)
        buf = fill_buffer(2 * cfg.l_h * DS + 2 * cfg.window_step)
        starts = candidate_windows(buf, cfg)
        assert len(starts) == 3
        prim = select_primitives(buf, cfg)
        assert len(prim.samples) == 10
        assert [c.start_s for c in prim.samples[:3]] == starts
        for c in prim.samples[3:]:
            assert c.start_s == starts[-1]

    def test_stratified_selection_spreads_slopes(self):
        cfg = SamplerConfig(p=10, max_distance=200_000.0)
        span = 2 * cfg.l_h * DS + 99 * cfg.window_step  # 100 candidates
        ramp_end = span - cfg.l_h * DS

        def slope_fn(s):
            return 0.05 * min(s / ramp_end, 1.0)

        buf = fill_buffer(span, slope_fn=slope_fn)
        assert len(candidate_windows(buf, cfg)) == 100
        prim = select_primitives(buf, cfg)
        slopes = sorted(c.values[:, THETA].mean() for c in prim.samples)
        spacing = np.diff(slopes)
        # picks should be spread over the ramp, not clustered
        assert slopes[0] < 0.006
        assert slopes[-1] > 0.042
        assert spacing.max() < 0.012

    def test_exclusion_invariant(self):
        cfg = SamplerConfig()
        for span in (4000.0, 12_000.0, 30_000.0):
            buf = fill_buffer(span)
            prim = select_primitives(buf, cfg)
            newest_end = max(c.endpoints(DS)[-1] for c in prim.samples)
            assert newest_end <= buf.s_now - cfg.l_h * DS + 1e-9
            assert prim.history.endpoints(DS)[-1] == buf.s_now

    def test_determinism(self):
        cfg = SamplerConfig()
        a = select_primitives(fill_buffer(25_000, seed=9), cfg)
        b = select_primitives(fill_buffer(25_000, seed=9), cfg)
        assert a.generated_at == b.generated_at
        for ca, cb in zip(a.samples, b.samples):
            assert ca.start_s == cb.start_s
            assert np.array_equal(ca.values, cb.values)

    def test_cold_start_error(self):
        with pytest.raises(ColdStartError):
            select_primitives(fill_buffer(1000), SamplerConfig())


class TestRefresh:
    def test_threshold_cases(self):
        cfg = SamplerConfig()
        buf = fill_buffer(5000)
        prim = select_primitives(buf, cfg)
        base = prim.generated_at
        fresh = PrimitiveSet(prim.samples, prim.history, generated_at=0.0)
        assert refresh_due(fresh, 100_000.0, cfg) is True
        assert refresh_due(fresh, 0.0, cfg) is False
        assert refresh_due(fresh, 99_950.0, cfg) is False
        del base

    def test_bad_config(self):
        with pytest.raises(DataError):
            SamplerConfig(window_step=-1.0)
        with pytest.raises(DataError):
            SamplerConfig(l_h=400, max_distance=10_000.0).validate(GRID)
