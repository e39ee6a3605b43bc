import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

from llmload import arrival as ar
from llmload import statmodel as sm


def rng(seed=0):
    return np.random.default_rng(seed)


class TestRateProfile:
    def test_requires_origin(self):
        with pytest.raises(sm.ParameterError):
            ar.RateProfile(((5.0, 1.0),))

    def test_rejects_negative_rate(self):
        with pytest.raises(sm.ParameterError):
            ar.RateProfile(((0.0, -1.0),))

    def test_cumulative_constant(self):
        p = ar.RateProfile(((0.0, 2.0), (10.0, 0.0), (20.0, 1.0)))
        assert p.cumulative([5.0, 15.0, 30.0]).tolist() == [10.0, 20.0, 30.0]

    def test_cumulative_linear(self):
        p = ar.RateProfile(((0.0, 0.0), (10.0, 10.0)), ar.LINEAR)
        assert p.cumulative(10.0) == pytest.approx(50.0)
        assert p.cumulative(12.0) == pytest.approx(70.0)

    def test_periodic(self):
        p = ar.RateProfile(((0.0, 1.0), (5.0, 3.0)), period=10.0)
        assert p.cumulative(25.0) == pytest.approx(2 * 20.0 + 5.0)
        assert p.rate_at(16.0) == 3.0

    def test_linear_discretization_keeps_integral(self):
        p = ar.RateProfile(((0.0, 1.0), (100.0, 5.0), (250.0, 0.5)), ar.LINEAR)
        bounds, rates = p.segments(1000.0)
        assert np.allclose(np.diff(bounds)[:-1], 60.0)
        assert np.sum(rates * np.diff(bounds)) == pytest.approx(p.cumulative(1000.0))

    def test_round_trip(self):
        p = ar.RateProfile(((0.0, 1.0), (60.0, 2.5)), ar.LINEAR, period=120.0, end=500.0)
        assert ar.RateProfile.from_dict(p.to_dict()) == p


class TestArrivalSpec:
    def test_gamma_shape_from_cv(self):
        spec = ar.ArrivalSpec.from_cv("Gamma", 2.0)
        assert spec.iat.shape == pytest.approx(0.25)

    def test_weibull_shape_from_cv(self):
        spec = ar.ArrivalSpec.from_cv("Weibull", 2.0)
        assert sm.weibull_cv(spec.iat.shape) == pytest.approx(2.0)

    def test_rejects_pareto(self):
        with pytest.raises(sm.ParameterError):
            ar.ArrivalSpec(sm.Pareto(2.0, 1.0))

    def test_exponential_cv_must_be_one(self):
        with pytest.raises(sm.ParameterError):
            ar.ArrivalSpec(sm.Exponential(1.0), 2.0)


class TestRenewal:
    def test_poisson_count(self):
        s = ar.sample_renewal(ar.ArrivalSpec.poisson(), 10.0, 1000.0, rng(1))
        assert abs(len(s) - 10000) <= 300

    def test_deterministic_empirical(self):
        s = ar.sample_renewal(ar.ArrivalSpec(sm.Empirical((1.0,))), 1.0, 10.0, rng())
        assert s.timestamps.tolist() == [1, 2, 3, 4, 5, 6, 7, 8, 9]
        assert sm.cv(s.iats()) == 0.0

    def test_gamma_cv(self):
        s = ar.sample_renewal(ar.ArrivalSpec.from_cv("Gamma", 2.0), 5.0, 10000.0, rng(2))
        assert sm.cv(s.iats()) == pytest.approx(2.0, rel=0.10)

    @pytest.mark.parametrize("family", ["Gamma", "Weibull"])
    @pytest.mark.parametrize("target", [0.5, 1.0, 2.0, 4.0])
    def test_burstiness_control(self, family, target):
        s = ar.sample_renewal(ar.ArrivalSpec.from_cv(family, target), 20.0, 20000.0, rng(3))
        assert sm.cv(s.iats()) == pytest.approx(target, rel=0.10)

    def test_iat_mean_matches_rate(self):
        s = ar.sample_renewal(ar.ArrivalSpec.from_cv("Weibull", 1.5), 4.0, 20000.0, rng(4))
        assert s.iats().mean() == pytest.approx(0.25, rel=0.05)

    def test_determinism(self):
        spec = ar.ArrivalSpec.from_cv("Gamma", 3.0)
        a = ar.sample_renewal(spec, 3.0, 500.0, rng(9))
        b = ar.sample_renewal(spec, 3.0, 500.0, rng(9))
        assert np.array_equal(a.timestamps, b.timestamps)

    def test_strictly_increasing_within_horizon(self):
        # CV 4 produces many sub-microsecond gaps that must be separated.
        s = ar.sample_renewal(ar.ArrivalSpec.from_cv("Gamma", 4.0), 200.0, 200.0, rng(5))
        ts = s.timestamps
        assert np.all(np.diff(ts) > 0)
        assert ts[0] >= 0 and ts[-1] < 200.0
        assert np.allclose(ts * 1e6, np.round(ts * 1e6))


class TestModulate:
    def test_two_segments(self):
        p = ar.RateProfile(((0.0, 5.0), (1000.0, 10.0)))
        s = ar.modulate(ar.ArrivalSpec.poisson(), p, 2000.0, rng(6))
        first = np.sum(s.timestamps < 1000)
        second = len(s) - first
        assert abs(first - 5000) <= 3 * np.sqrt(5000)
        assert abs(second - 10000) <= 3 * np.sqrt(10000)

    def test_zero_rate_segment(self):
        p = ar.RateProfile(((0.0, 5.0), (100.0, 0.0), (200.0, 5.0)))
        s = ar.modulate(ar.ArrivalSpec.from_cv("Gamma", 2.0), p, 300.0, rng(7))
        ts = s.timestamps
        assert not np.any((ts >= 100.0) & (ts < 200.0))
        assert np.any(ts >= 200.0)

    def test_constant_profile_matches_renewal(self):
        spec = ar.ArrivalSpec.from_cv("Weibull", 1.7)
        a = ar.modulate(spec, ar.RateProfile.constant(3.0), 400.0, rng(8))
        b = ar.sample_renewal(spec, 3.0, 400.0, rng(8))
        assert np.array_equal(a.timestamps, b.timestamps)

    def test_coverage_error(self):
        p = ar.RateProfile(((0.0, 1.0),), end=100.0)
        with pytest.raises(ar.CoverageError):
            ar.modulate(ar.ArrivalSpec.poisson(), p, 200.0, rng())

    def test_rate_fidelity_linear(self):
        p = ar.RateProfile(((0.0, 2.0), (3000.0, 8.0), (6000.0, 1.0)), ar.LINEAR)
        s = ar.modulate(ar.ArrivalSpec.from_cv("Gamma", 1.5), p, 6000.0, rng(10))
        assert len(s) / 6000.0 == pytest.approx(p.mean_rate(6000.0), rel=0.05)

    def test_no_boundary_burst(self):
        # Alternating rates: CV inside the high-rate segments should stay near
        # the renewal CV rather than jumping at each switch.
        p = ar.RateProfile(((0.0, 20.0), (50.0, 2.0)), period=100.0)
        s = ar.modulate(ar.ArrivalSpec.from_cv("Gamma", 1.0), p, 20000.0, rng(11))
        ts = s.timestamps
        phase = np.mod(ts, 100.0)
        near = np.sum((phase >= 50.0) & (phase < 51.0))
        assert near / 200 == pytest.approx(2.0, rel=0.2)

    @settings(max_examples=25, deadline=None)
    @given(
        hst.lists(hst.floats(0.0, 20.0), min_size=1, max_size=6),
        hst.integers(0, 10_000),
        hst.sampled_from([0.5, 1.0, 3.0]),
    )
    def test_segment_counts_add_up(self, rates, seed, cv):
        bps = tuple((100.0 * i, r) for i, r in enumerate(rates))
        horizon = 100.0 * len(rates)
        s = ar.modulate(ar.ArrivalSpec.from_cv("Gamma", cv), ar.RateProfile(bps), horizon, rng(seed))
        ts = s.timestamps
        assert np.all(np.diff(ts) > 0)
        per_seg = np.bincount((ts // 100).astype(int), minlength=len(rates))
        assert per_seg.sum() == len(ts)
        for i, r in enumerate(rates):
            if r == 0:
                assert per_seg[i] == 0


class TestWindowedStats:
    def test_deterministic(self):
        ts = np.arange(1.0, 600.0)
        stats = ar.windowed_stats(ts, 60.0, horizon=600.0)
        assert len(stats) == 10
        for w in stats[1:]:
            assert w.rate == 1.0
            assert w.cv == 0.0

    def test_poisson_windows(self):
        s = ar.sample_renewal(ar.ArrivalSpec.poisson(), 10.0, 30000.0, rng(12))
        stats = ar.windowed_stats(s, 300.0)
        good = [abs(w.cv - 1) <= 0.15 for w in stats if w.cv is not None]
        assert np.mean(good) >= 0.9

    def test_empty(self):
        assert ar.windowed_stats([], 60.0) == []

    def test_sparse_windows_have_no_cv(self):
        ts = [1.0, 2.0, 65.0, 66.0, 67.0, 68.0]
        stats = ar.windowed_stats(ts, 60.0)
        assert stats[0].count == 2 and stats[0].cv is None
        assert stats[1].cv == pytest.approx(0.0)

    def test_left_endpoint_assignment(self):
        # IAT 10 -> 70 starts in window 0, so window 0 has IATs {5, 5, 60}.
        ts = [0.0, 5.0, 10.0, 70.0]
        stats = ar.windowed_stats(ts, 60.0)
        iats = np.array([5.0, 5.0, 60.0])
        assert stats[0].cv == pytest.approx(iats.std() / iats.mean())
