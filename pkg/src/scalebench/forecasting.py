"""Multistep-ahead workload forecasting behind a single pluggable interface.

Three built-in methods cover the common workload shapes:

* ``naive-last``      persistence forecast (repeat the last observation)
* ``seasonal-naive``  repeat the previous season, for periodic workloads
* ``holt-linear``     double exponential smoothing with linear trend
                      extrapolation, for trending workloads (default)

All forecasters are deterministic functions of (history, config) and are safe
for concurrent invocation.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .timeseries import TimeSeries


class ForecastError(ValueError):
    """Base class for forecasting failures."""


class InsufficientHistoryError(ForecastError):
    pass


class UnknownMethodError(ForecastError):
    pass


class MisalignedOriginError(ForecastError):
    pass


METHODS = ("naive-last", "seasonal-naive", "holt-linear")


@dataclass(frozen=True)
class ForecastConfig:
    """Tuning knobs for the built-in forecasters.

    ``history_window_s`` limits how much trailing history a refit sees;
    ``None`` uses everything available.
    """

    method: str = "holt-linear"
    horizon_s: float = 600.0
    seasonal_period_s: float = 3600.0
    holt_alpha: float = 0.5
    holt_beta: float = 0.1
    history_window_s: float | None = None

    def with_method(self, method: str) -> "ForecastConfig":
        return replace(self, method=method)


@dataclass(frozen=True)
class Forecast:
    """Forecast issued at ``origin`` with steps over (origin, origin+horizon]."""

    origin: float
    steps: TimeSeries
    method: str

    @property
    def horizon(self) -> float:
        if not len(self.steps):
            return 0.0
        return self.steps.end - self.origin


def forecast(
    history: TimeSeries,
    t0: float,
    horizon: float,
    method: str = "holt-linear",
    *,
    config: ForecastConfig | None = None,
) -> Forecast:
    """Forecast the workload from ``t0`` out to ``t0 + horizon``.

    The step width equals the history's sample spacing and every predicted
    value is clamped to be non-negative.
    """
    cfg = config or ForecastConfig()
    if method not in METHODS:
        raise UnknownMethodError(f"unknown forecast method {method!r}; have {METHODS}")
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    if cfg.history_window_s is not None and len(history):
        history = history.slice(history.end - cfg.history_window_s, history.end)

    step = history.step()
    if step <= 0:
        raise InsufficientHistoryError("history needs at least two samples")
    n_steps = int(round(horizon / step))
    if n_steps == 0:
        return Forecast(origin=t0, steps=TimeSeries([], []), method=method)

    values = history.values
    if method == "seasonal-naive":
        period_samples = max(1, int(round(cfg.seasonal_period_s / step)))
        if len(values) < 2 * period_samples:
            raise InsufficientHistoryError(
                f"seasonal-naive needs >= {2 * period_samples} samples, "
                f"have {len(values)}"
            )
        tail = values[-period_samples:]
        preds = np.array([tail[k % period_samples] for k in range(n_steps)])
    elif method == "naive-last":
        if len(values) < 10:
            raise InsufficientHistoryError("naive-last needs >= 10 samples")
        preds = np.full(n_steps, values[-1])
    else:  # holt-linear
        if len(values) < 10:
            raise InsufficientHistoryError("holt-linear needs >= 10 samples")
        level, trend = _holt_fit(values, cfg.holt_alpha, cfg.holt_beta)
        preds = level + trend * np.arange(1, n_steps + 1)

    preds = np.maximum(preds, 0.0)
    times = t0 + step * np.arange(1, n_steps + 1)
    return Forecast(origin=t0, steps=TimeSeries(times, preds), method=method)


def _holt_fit(values: np.ndarray, alpha: float, beta: float) -> tuple[float, float]:
    """Final (level, trend) of double exponential smoothing over the history."""
    level = float(values[0])
    trend = float(values[1] - values[0])
    for y in values[1:]:
        prev_level = level
        level = alpha * float(y) + (1 - alpha) * (level + trend)
        trend = beta * (level - prev_level) + (1 - beta) * trend
    return level, trend


def combined_series(history: TimeSeries, fc: Forecast) -> TimeSeries:
    """History and forecast steps joined into one series.

    This is the series the recovery estimator integrates over: observed rates
    up to the forecast origin, predicted rates beyond it.
    """
    if not len(fc.steps):
        return history
    if abs(fc.origin - history.end) > 1e-9:
        raise MisalignedOriginError(
            f"forecast origin {fc.origin:g} != history end {history.end:g}"
        )
    return history.concat(fc.steps)
