import numpy as np
import pytest

from scalebench.timeseries import TimeSeries
from scalebench.workloads import TraceError, WorkloadSpec, commuter_trace, generate, scale_trace


class TestGenerate:
    def test_constant_without_noise(self):
        series = generate(WorkloadSpec.constant(50_000.0), duration_s=60.0, tick_s=1.0)
        assert np.all(series.values == 50_000.0)
        assert series.start == 0.0
        assert series.end == 60.0

    def test_sinusoid_peak_at_quarter_period(self):
        spec = WorkloadSpec.sinusoid(mean=100_000.0, amplitude=80_000.0, period_s=400.0)
        series = generate(spec, duration_s=400.0, tick_s=1.0)
        assert series.value_at(100.0) == pytest.approx(180_000.0)

    def test_noise_bounded(self):
        spec = WorkloadSpec.sinusoid(mean=100_000.0, amplitude=80_000.0, period_s=400.0,
                                     variance_pct=0.10)
        noisy = generate(spec, duration_s=400.0, tick_s=1.0, seed=5)
        clean = generate(WorkloadSpec.sinusoid(100_000.0, 80_000.0, 400.0),
                         duration_s=400.0, tick_s=1.0)
        ratio = noisy.values / np.maximum(clean.values, 1e-9)
        assert np.all(ratio >= 0.9 - 1e-9)
        assert np.all(ratio <= 1.1 + 1e-9)

    def test_phase_shifts_peak(self):
        spec = WorkloadSpec.sinusoid(mean=10.0, amplitude=5.0, period_s=400.0, phase_s=40.0)
        series = generate(spec, duration_s=400.0, tick_s=1.0)
        assert series.value_at(140.0) == pytest.approx(15.0)

    def test_ramp(self):
        series = generate(WorkloadSpec.ramp(level=100.0, slope=2.0), duration_s=10.0, tick_s=1.0)
        assert series.value_at(10.0) == pytest.approx(120.0)

    def test_non_negative_clamp(self):
        spec = WorkloadSpec.sinusoid(mean=10.0, amplitude=50.0, period_s=100.0)
        series = generate(spec, duration_s=100.0, tick_s=1.0)
        assert np.all(series.values >= 0.0)

    def test_deterministic_under_seed(self):
        spec = WorkloadSpec.constant(1000.0, variance_pct=0.1)
        a = generate(spec, 100.0, 1.0, seed=9)
        b = generate(spec, 100.0, 1.0, seed=9)
        c = generate(spec, 100.0, 1.0, seed=10)
        assert np.array_equal(a.values, b.values)
        assert not np.array_equal(a.values, c.values)

    def test_trace_roundtrip_and_resample(self, tmp_path):
        path = tmp_path / "trace.csv"
        TimeSeries([0.0, 100.0, 200.0], [10.0, 110.0, 10.0]).to_csv(path)
        series = generate(WorkloadSpec.trace(path), duration_s=200.0, tick_s=50.0)
        assert series.value_at(50.0) == pytest.approx(60.0)
        # integral preserved within 1% for this smooth trace
        assert series.integrate(0, 200) == pytest.approx(12_000.0, rel=0.01)

    def test_trace_missing_file(self):
        with pytest.raises(TraceError):
            generate(WorkloadSpec.trace("/nonexistent/trace.csv"), 10.0, 1.0)

    def test_trace_too_short(self, tmp_path):
        path = tmp_path / "trace.csv"
        TimeSeries([0.0, 50.0], [1.0, 1.0]).to_csv(path)
        with pytest.raises(TraceError):
            generate(WorkloadSpec.trace(path), duration_s=500.0, tick_s=1.0)


class TestScaleTrace:
    def test_identity_factor_preserves_integers(self):
        trace = TimeSeries(range(100), [10_000.0] * 100)
        scaled = scale_trace(trace, 1.0, seed=0)
        assert np.all(scaled.values == 10_000.0)

    def test_doubling(self):
        trace = TimeSeries(range(100), [10_000.0] * 100)
        scaled = scale_trace(trace, 2.0, seed=0)
        assert np.all(scaled.values == 20_000.0)

    def test_halving_unit_rate_is_bernoulli(self):
        n = 4000
        trace = TimeSeries(range(n), [1.0] * n)
        scaled = scale_trace(trace, 0.5, seed=123)
        assert set(np.unique(scaled.values)) <= {0.0, 1.0}
        # mean converges to 0.5; 3 sigma of a Bernoulli(0.5) sample mean
        sigma = 0.5 / np.sqrt(n)
        assert abs(scaled.values.mean() - 0.5) <= 3 * sigma

    def test_expected_value_exact(self):
        rng = np.random.default_rng(4)
        values = rng.uniform(0, 1000, 5000)
        trace = TimeSeries(range(5000), values)
        scaled = scale_trace(trace, 1.7, seed=11)
        assert scaled.values.mean() == pytest.approx(values.mean() * 1.7, rel=0.01)

    def test_deterministic_under_seed(self):
        trace = TimeSeries(range(50), [7.3] * 50)
        assert np.array_equal(scale_trace(trace, 0.9, seed=2).values,
                              scale_trace(trace, 0.9, seed=2).values)


class TestCommuterTrace:
    def test_two_peaks_and_positive(self):
        trace = commuter_trace()
        values = trace.values
        assert np.all(values > 0)
        morning = trace.value_at(8 * 3600.0)
        evening = trace.value_at(17.5 * 3600.0)
        midnight = trace.value_at(0.0)
        assert morning > 2 * midnight
        assert evening > morning  # asymmetric peaks

    def test_usable_as_trace_workload(self, tmp_path):
        path = tmp_path / "commuter.csv"
        commuter_trace(duration_s=7200.0, tick_s=60.0).to_csv(path)
        series = generate(WorkloadSpec.trace(path), duration_s=3600.0, tick_s=60.0)
        assert len(series) == 61
