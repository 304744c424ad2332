"""Parallel profiling of a job across a scaleout set at stepped workload rates.

Every deployment in the set is driven at the same increasing sequence of
rates. After each rate step the measured average latencies are assessed:
deployments whose latency has detached from the group (or from their own
latency-vs-rate trend) are invalid, their maximum capacity is recorded as the
last rate they sustained, and they are torn down. Profiling ends once every
deployment's capacity is known.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

from .models import two_means


class ProfilingError(RuntimeError):
    pass


class InvalidRangeError(ValueError):
    pass


class IncompleteDatasetError(ProfilingError):
    """Profiling stopped before every deployment's capacity was found."""

    def __init__(self, message: str, dataset: "ProfilingDataset"):
        super().__init__(message)
        self.dataset = dataset


@dataclass(frozen=True)
class ScaleoutSet:
    """Strictly increasing scaleouts to profile and to scale between."""

    scaleouts: tuple[int, ...]

    def __post_init__(self):
        values = tuple(int(s) for s in self.scaleouts)
        object.__setattr__(self, "scaleouts", values)
        if len(values) < 1 or any(b <= a for a, b in zip(values, values[1:])):
            raise InvalidRangeError("scaleouts must be strictly increasing")
        if values[0] < 1:
            raise InvalidRangeError("scaleouts must be >= 1")

    @property
    def min(self) -> int:
        return self.scaleouts[0]

    @property
    def max(self) -> int:
        return self.scaleouts[-1]

    def __iter__(self):
        return iter(self.scaleouts)

    def __len__(self):
        return len(self.scaleouts)


def build_scaleout_set(s_min: int, s_max: int, s_count: int) -> ScaleoutSet:
    """Equally spaced scaleouts across [s_min, s_max], rounded to integers.

    Duplicates after rounding shift upward to the nearest unused integer.
    """
    if not 1 <= s_min < s_max:
        raise InvalidRangeError(f"need 1 <= s_min < s_max, got [{s_min}, {s_max}]")
    if not 2 <= s_count <= s_max - s_min + 1:
        raise InvalidRangeError(
            f"need 2 <= s_count <= {s_max - s_min + 1}, got {s_count}"
        )
    chosen: list[int] = []
    used: set[int] = set()
    for i in range(s_count):
        raw = s_min + (s_max - s_min) * i / (s_count - 1)
        value = int(math.floor(raw + 0.5))
        while value in used:
            value += 1
        used.add(value)
        chosen.append(value)
    return ScaleoutSet(scaleouts=tuple(sorted(chosen)))


@dataclass(frozen=True)
class ProfilingRecord:
    scaleout: int
    offered_rate: float
    avg_latency_ms: float
    valid: bool


@dataclass
class ProfilingDataset:
    """Profiling measurements plus the discovered capacity per scaleout."""

    records: list[ProfilingRecord] = field(default_factory=list)
    tmax_points: dict[int, float] = field(default_factory=dict)

    def to_csv(self, records_path: str | Path, tmax_path: str | Path) -> None:
        with open(records_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["scaleout", "offered_rate", "avg_latency_ms", "valid"])
            for rec in self.records:
                writer.writerow(
                    [rec.scaleout, repr(rec.offered_rate), repr(rec.avg_latency_ms), int(rec.valid)]
                )
        with open(tmax_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["scaleout", "tmax"])
            for s in sorted(self.tmax_points):
                writer.writerow([s, repr(self.tmax_points[s])])

    @classmethod
    def from_csv(cls, records_path: str | Path, tmax_path: str | Path) -> "ProfilingDataset":
        dataset = cls()
        with open(records_path, newline="") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                dataset.records.append(
                    ProfilingRecord(
                        scaleout=int(row["scaleout"]),
                        offered_rate=float(row["offered_rate"]),
                        avg_latency_ms=float(row["avg_latency_ms"]),
                        valid=bool(int(row["valid"])),
                    )
                )
        with open(tmax_path, newline="") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                dataset.tmax_points[int(row["scaleout"])] = float(row["tmax"])
        return dataset


class ProfilingEnvironment(Protocol):
    """Metrics source the profiler runs against.

    Only the simulator backend ships with the workbench; a live-cluster
    backend would implement the same surface.
    """

    def start(self, scaleouts: Sequence[int]) -> None: ...

    def measure(self, scaleout: int, rate: float, dwell_s: float, settle_s: float) -> float: ...

    def stop(self, scaleout: int) -> None: ...


def assess_validity(
    latencies: Mapping[int, float],
    history: Mapping[int, Sequence[tuple[float, float]]],
    rate: float,
    *,
    cluster_gap_factor: float = 2.0,
    deviation_factor: float = 2.0,
) -> dict[int, bool]:
    """Decide which deployments still keep up at the current rate.

    With three or more live deployments the current latencies are clustered
    (2-means on the log scale); if the clusters separate, the group with the
    smaller centroid is valid. With fewer, each deployment is compared to a
    line fit through its own previous (rate, latency) points and flagged when
    the measurement exceeds the prediction by more than ``deviation_factor``.
    """
    if not latencies:
        raise ValueError("no live deployments")
    if len(latencies) >= 3:
        scaleouts = sorted(latencies)
        logs = [math.log(max(latencies[s], 1e-9)) for s in scaleouts]
        c_low, c_high, labels = two_means(logs)
        gap = c_high - c_low
        if gap > 0:
            spreads = []
            for label in (0, 1):
                members = [x for x, lb in zip(logs, labels) if lb == label]
                spreads.append(max(members) - min(members) if members else 0.0)
            separated = gap > cluster_gap_factor * max(spreads) and gap > math.log(
                deviation_factor
            )
        else:
            separated = False
        if not separated:
            return {s: True for s in scaleouts}
        return {s: bool(lb == 0) for s, lb in zip(scaleouts, labels)}

    verdicts: dict[int, bool] = {}
    for s, latency in latencies.items():
        pts = list(history.get(s, ()))
        if not pts:
            verdicts[s] = True
            continue
        if len(pts) == 1:
            predicted = pts[0][1]
        else:
            xs = [p[0] for p in pts]
            ys = [p[1] for p in pts]
            n = len(pts)
            mean_x = sum(xs) / n
            mean_y = sum(ys) / n
            denom = sum((x - mean_x) ** 2 for x in xs)
            slope = sum((x - mean_x) * (y - mean_y) for x, y in zip(xs, ys)) / denom if denom else 0.0
            predicted = mean_y + slope * (rate - mean_x)
        # a fit through noisy points can dip; never predict below the best seen
        predicted = max(predicted, min(p[1] for p in pts))
        verdicts[s] = latency <= deviation_factor * predicted
    return verdicts


def run_profiling(
    scaleout_set: ScaleoutSet,
    env: ProfilingEnvironment,
    rate_start: float,
    rate_step: float,
    dwell_s: float,
    settle_s: float,
    *,
    cluster_gap_factor: float = 2.0,
    deviation_factor: float = 2.0,
    max_rate_factor: float = 100.0,
) -> ProfilingDataset:
    """Sweep all deployments over increasing rates until every capacity is found.

    The capacity recorded for a deployment is the last rate it sustained (a
    conservative underestimate, never above the true maximum). Raises
    ``IncompleteDatasetError`` with the partial dataset if the sweep overruns
    ``max_rate_factor`` times the starting rate.
    """
    if rate_step <= 0:
        raise ValueError("rate_step must be positive")
    if dwell_s <= settle_s:
        raise ValueError("dwell must exceed settle")

    dataset = ProfilingDataset()
    live = list(scaleout_set)
    env.start(live)
    history: dict[int, list[tuple[float, float]]] = {s: [] for s in live}
    last_valid_rate: dict[int, float] = {}
    rate = rate_start
    while live:
        if rate > max_rate_factor * rate_start:
            raise IncompleteDatasetError(
                f"rate overflow guard hit at {rate:g} msg/s with {live} still live",
                dataset,
            )
        latencies = {s: env.measure(s, rate, dwell_s, settle_s) for s in live}
        verdicts = assess_validity(
            latencies,
            history,
            rate,
            cluster_gap_factor=cluster_gap_factor,
            deviation_factor=deviation_factor,
        )
        for s in list(live):
            dataset.records.append(
                ProfilingRecord(
                    scaleout=s,
                    offered_rate=rate,
                    avg_latency_ms=latencies[s],
                    valid=verdicts[s],
                )
            )
            if verdicts[s]:
                history[s].append((rate, latencies[s]))
                last_valid_rate[s] = rate
            else:
                dataset.tmax_points[s] = last_valid_rate.get(s, max(rate - rate_step, 0.0))
                env.stop(s)
                live.remove(s)
        rate += rate_step
    return dataset
