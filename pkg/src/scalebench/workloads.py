"""Workload-trace generation and replay.

Supports the shapes the experiments need: a sinusoidal load with
multiplicative per-tick variance, constants and ramps for calibration, and
trace-file playback (resampled onto the tick grid). ``scale_trace`` is the
rate scaler used when replaying recorded traffic at a different volume, with
stochastic rounding so expected rates stay exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .timeseries import TimeSeries

KINDS = ("sinusoid", "trace", "constant", "ramp")


class TraceError(ValueError):
    """Missing or malformed trace file."""


@dataclass(frozen=True)
class WorkloadSpec:
    """One workload shape plus its parameters; see the class methods."""

    kind: str
    mean: float = 0.0
    amplitude: float = 0.0
    period_s: float = 3600.0
    phase_s: float = 0.0
    variance_pct: float = 0.0
    level: float = 0.0
    slope: float = 0.0
    path: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown workload kind {self.kind!r}; have {KINDS}")
        if not 0 <= self.variance_pct < 1:
            raise ValueError("variance_pct must be in [0, 1)")

    @classmethod
    def sinusoid(cls, mean, amplitude, period_s, variance_pct=0.0, phase_s=0.0):
        return cls(
            kind="sinusoid", mean=mean, amplitude=amplitude, period_s=period_s,
            variance_pct=variance_pct, phase_s=phase_s,
        )

    @classmethod
    def constant(cls, level, variance_pct=0.0):
        return cls(kind="constant", level=level, variance_pct=variance_pct)

    @classmethod
    def ramp(cls, level, slope, variance_pct=0.0):
        return cls(kind="ramp", level=level, slope=slope, variance_pct=variance_pct)

    @classmethod
    def trace(cls, path, variance_pct=0.0):
        return cls(kind="trace", path=str(path), variance_pct=variance_pct)


def generate(spec: WorkloadSpec, duration_s: float, tick_s: float, seed: int = 0) -> TimeSeries:
    """Sample the workload on the tick grid over [0, duration], noise applied
    multiplicatively per tick and rates clamped to be non-negative."""
    if duration_s <= 0 or tick_s <= 0:
        raise ValueError("duration and tick must be positive")
    t = np.arange(0.0, duration_s + tick_s / 2.0, tick_s)
    if spec.kind == "sinusoid":
        base = spec.mean + spec.amplitude * np.sin(2.0 * math.pi * (t - spec.phase_s) / spec.period_s)
    elif spec.kind == "constant":
        base = np.full_like(t, spec.level)
    elif spec.kind == "ramp":
        base = spec.level + spec.slope * t
    else:  # trace
        if spec.path is None:
            raise TraceError("trace workload needs a path")
        try:
            trace = TimeSeries.from_csv(spec.path)
        except FileNotFoundError as exc:
            raise TraceError(f"trace file not found: {spec.path}") from exc
        except ValueError as exc:
            raise TraceError(f"malformed trace {spec.path}: {exc}") from exc
        span = trace.end - trace.start
        if span < duration_s:
            raise TraceError(
                f"trace covers {span:g} s, need {duration_s:g} s"
            )
        base = np.interp(t + trace.start, trace.timestamps, trace.values)
    if spec.variance_pct > 0:
        rng = np.random.default_rng(seed)
        base = base * (1.0 + rng.uniform(-spec.variance_pct, spec.variance_pct, size=base.shape))
    return TimeSeries(t, np.maximum(base, 0.0))


def scale_trace(trace: TimeSeries, factor: float, seed: int = 0) -> TimeSeries:
    """Scale per-tick rates by replicating/deleting events.

    Rates are multiplied and stochastically rounded to whole events per tick,
    so the expected rate is exact while every emitted value is an integer
    count.
    """
    if factor <= 0:
        raise ValueError("factor must be positive")
    rng = np.random.default_rng(seed)
    scaled = trace.values * factor
    floor = np.floor(scaled)
    frac = scaled - floor
    rounded = floor + (rng.uniform(size=scaled.shape) < frac)
    return TimeSeries(trace.timestamps, rounded)


def commuter_trace(duration_s: float = 86_400.0, tick_s: float = 60.0) -> TimeSeries:
    """Bundled synthetic commuter workload: two asymmetric daily peaks.

    Stands in for a recorded vehicle-count trace; substitute a real one by
    writing it in the TimeSeries CSV format and pointing a trace workload at
    it.
    """
    t = np.arange(0.0, duration_s + tick_s / 2.0, tick_s)
    day = t % 86_400.0
    morning = 60_000.0 * np.exp(-0.5 * ((day - 8.0 * 3600.0) / (1.6 * 3600.0)) ** 2)
    evening = 85_000.0 * np.exp(-0.5 * ((day - 17.5 * 3600.0) / (2.4 * 3600.0)) ** 2)
    base = 12_000.0 + morning + evening
    return TimeSeries(t, base)
