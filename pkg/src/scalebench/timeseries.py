"""Immutable time-series container with the aggregation primitives used
throughout the workbench: trapezoidal integration, averaging bins, and
tumbling-window percentiles.

Values are timestamped in seconds since experiment start and are
caller-defined scalars (msg/s rates, milliseconds of latency, ...). A series
is immutable after construction, so instances can be shared freely across
concurrent tasks.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class DomainError(ValueError):
    """Query outside the (extended) time domain of a series."""


class CoverageError(ValueError):
    """Series does not cover the interval required by an aggregation."""


@dataclass(frozen=True)
class Bin:
    """One averaging bin: the mean of the series over [start, end)."""

    start: float
    end: float
    mean_value: float


class TimeSeries:
    """Ordered (timestamp, value) samples with strictly increasing timestamps.

    Between samples the series is interpolated linearly. Queries up to one
    sample interval beyond the last point hold the last value constant;
    anything further raises ``DomainError``.
    """

    __slots__ = ("_t", "_v", "_cum")

    def __init__(self, timestamps: Iterable[float], values: Iterable[float]):
        t = np.asarray(list(timestamps), dtype=float)
        v = np.asarray(list(values), dtype=float)
        if t.shape != v.shape or t.ndim != 1:
            raise ValueError("timestamps and values must be 1-D and equal length")
        if t.size and not np.all(np.isfinite(t)):
            raise ValueError("timestamps must be finite")
        if v.size and not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")
        if v.size and np.any(v < 0):
            raise ValueError("values must be non-negative")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("timestamps must be strictly increasing")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "_t", t)
        object.__setattr__(self, "_v", v)
        object.__setattr__(self, "_cum", None)

    def __setattr__(self, name, value):  # immutability guard
        raise AttributeError("TimeSeries is immutable")

    def __len__(self) -> int:
        return int(self._t.size)

    def __repr__(self) -> str:
        if not len(self):
            return "TimeSeries(empty)"
        return f"TimeSeries({len(self)} samples over [{self.start:g}, {self.end:g}])"

    @property
    def timestamps(self) -> np.ndarray:
        return self._t

    @property
    def values(self) -> np.ndarray:
        return self._v

    @property
    def start(self) -> float:
        self._require_nonempty()
        return float(self._t[0])

    @property
    def end(self) -> float:
        self._require_nonempty()
        return float(self._t[-1])

    def step(self) -> float:
        """Median sample spacing; also the width of the domain extension."""
        if len(self) < 2:
            return 0.0
        return float(np.median(np.diff(self._t)))

    def _require_nonempty(self):
        if not len(self):
            raise DomainError("series is empty")

    @property
    def extended_end(self) -> float:
        return self.end + self.step()

    def value_at(self, t: float) -> float:
        """Linearly interpolated value at time ``t`` (hold-last past the end)."""
        self._require_nonempty()
        if t < self._t[0] - 1e-9 or t > self.extended_end + 1e-9:
            raise DomainError(
                f"t={t:g} outside domain [{self.start:g}, {self.extended_end:g}]"
            )
        if t >= self._t[-1]:
            return float(self._v[-1])
        return float(np.interp(t, self._t, self._v))

    def _cumulative(self) -> np.ndarray:
        # cached trapezoid antiderivative at every sample timestamp
        cum = self._cum
        if cum is None:
            dt = np.diff(self._t)
            seg = dt * (self._v[:-1] + self._v[1:]) / 2.0
            cum = np.concatenate(([0.0], np.cumsum(seg)))
            cum.setflags(write=False)
            object.__setattr__(self, "_cum", cum)
        return cum

    def _antiderivative(self, x: float) -> float:
        cum = self._cumulative()
        t, v = self._t, self._v
        if x >= t[-1]:
            return float(cum[-1] + v[-1] * (x - t[-1]))
        i = int(np.searchsorted(t, x, side="right") - 1)
        i = max(i, 0)
        vx = v[i] + (v[i + 1] - v[i]) * (x - t[i]) / (t[i + 1] - t[i])
        return float(cum[i] + (x - t[i]) * (v[i] + vx) / 2.0)

    def integrate(self, a: float, b: float) -> float:
        """Trapezoidal approximation of the definite integral over [a, b]."""
        if a > b:
            raise ValueError(f"integration bounds reversed: a={a:g} > b={b:g}")
        if a == b:
            return 0.0
        self._require_nonempty()
        if a < self._t[0] - 1e-9 or b > self.extended_end + 1e-9:
            raise DomainError(
                f"[{a:g}, {b:g}] outside domain [{self.start:g}, {self.extended_end:g}]"
            )
        if len(self) == 1:
            return float(self._v[0] * (b - a))
        return self._antiderivative(b) - self._antiderivative(a)

    def bin_means(self, start: float, horizon: float, bin_count: int) -> list[Bin]:
        """Split [start, start+horizon) into equal-width averaging bins.

        Each bin's mean is the arithmetic mean of the samples falling in
        [bin_start, bin_end); a bin without samples falls back to the
        interpolated value at its midpoint.
        """
        if horizon <= 0:
            raise ValueError("horizon must be positive")
        if bin_count < 1:
            raise ValueError("bin_count must be >= 1")
        self._require_nonempty()
        if start < self._t[0] - 1e-9 or start + horizon > self.extended_end + 1e-9:
            raise CoverageError(
                f"series covers [{self.start:g}, {self.extended_end:g}], "
                f"need [{start:g}, {start + horizon:g}]"
            )
        width = horizon / bin_count
        bins: list[Bin] = []
        for i in range(bin_count):
            bs = start + i * width
            be = start + (i + 1) * width
            lo = int(np.searchsorted(self._t, bs - 1e-9, side="left"))
            hi = int(np.searchsorted(self._t, be - 1e-9, side="left"))
            if hi > lo:
                mean = float(np.mean(self._v[lo:hi]))
            else:
                mean = self.value_at((bs + be) / 2.0)
            bins.append(Bin(bs, be, mean))
        return bins

    def windowed_percentile(self, window: float, q: float) -> "TimeSeries":
        """Nearest-rank percentile over tumbling windows of the given width.

        Output points are timestamped at the window end; empty windows are
        skipped.
        """
        if window <= 0:
            raise ValueError("window must be positive")
        if not 0 < q <= 100:
            raise ValueError("q must be in (0, 100]")
        self._require_nonempty()
        out_t: list[float] = []
        out_v: list[float] = []
        ws = self.start
        while ws <= self.end:
            we = ws + window
            lo = int(np.searchsorted(self._t, ws - 1e-9, side="left"))
            hi = int(np.searchsorted(self._t, we - 1e-9, side="left"))
            if hi > lo:
                out_t.append(we)
                out_v.append(nearest_rank(self._v[lo:hi], q))
            ws = we
        return TimeSeries(out_t, out_v)

    def slice(self, a: float, b: float) -> "TimeSeries":
        """Sub-series of samples with timestamps in [a, b]."""
        lo = int(np.searchsorted(self._t, a - 1e-9, side="left"))
        hi = int(np.searchsorted(self._t, b + 1e-9, side="right"))
        return TimeSeries(self._t[lo:hi], self._v[lo:hi])

    def concat(self, other: "TimeSeries") -> "TimeSeries":
        """Append a later series; its first timestamp must follow ours."""
        if not len(other):
            return self
        if not len(self):
            return other
        if other.start <= self.end:
            raise ValueError("concatenated series must start after this one ends")
        return TimeSeries(
            np.concatenate([self._t, other._t]), np.concatenate([self._v, other._v])
        )

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["timestamp_s", "value"])
            for t, v in zip(self._t, self._v):
                writer.writerow([repr(float(t)), repr(float(v))])

    @classmethod
    def from_csv(cls, path: str | Path) -> "TimeSeries":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["timestamp_s", "value"]:
                raise ValueError(f"{path}: expected header 'timestamp_s,value'")
            rows = [(float(r[0]), float(r[1])) for r in reader if r]
        return cls([r[0] for r in rows], [r[1] for r in rows])


def nearest_rank(values: Sequence[float] | np.ndarray, q: float) -> float:
    """Nearest-rank percentile: the ceil(q/100 * n)-th smallest value."""
    arr = np.sort(np.asarray(values, dtype=float))
    if arr.size == 0:
        raise ValueError("cannot take a percentile of no samples")
    rank = max(1, math.ceil(q / 100.0 * arr.size))
    return float(arr[rank - 1])
