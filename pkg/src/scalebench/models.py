"""QoS models trained from profiling data.

Two models drive scaling decisions:

* The latency model predicts the average end-to-end latency for any
  (scaleout, rate) combination via degree-2 polynomial least squares, and
  classifies the prediction as normal (cluster 0) or unstable (cluster 1)
  using a 1-D 2-means boundary in preprocessed latency space.
* The recovery model combines a monotone capacity curve with a workload
  series (history plus forecast) and estimates the recovery time after a
  failure as downtime plus a geometrically decreasing catch-up sequence.

Fitted models are immutable; refits build new instances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Mapping, Sequence

import numpy as np

from .timeseries import DomainError, TimeSeries

if TYPE_CHECKING:  # only for annotations; avoids a circular import
    from .profiler import ProfilingDataset


class ModelError(ValueError):
    pass


class InsufficientDataError(ModelError):
    pass


class DegenerateFitError(ModelError):
    pass


class InsufficientPointsError(ModelError):
    pass


INFEASIBLE = math.inf
PREPROCESS_EPS = 1e-6


@dataclass(frozen=True)
class PreprocessParams:
    """Latency normalization bounds taken from the training data."""

    p1: float
    p99: float
    eps: float = PREPROCESS_EPS


def preprocess_latency(x: float, params: PreprocessParams) -> float:
    """Normalize a latency into [p1, p99] and apply a log transform.

    Values at or below p1 clamp to ln(eps); p99 maps to 0. Degenerate
    bounds (p99 == p1) clamp everything.
    """
    span = params.p99 - params.p1
    if span <= 0:
        return math.log(params.eps)
    scaled = (x - params.p1) / span
    return math.log(max(scaled, params.eps))


def two_means(values: Sequence[float] | np.ndarray, max_iter: int = 100) -> tuple[float, float, np.ndarray]:
    """Deterministic 1-D 2-means: centroids start at the 10th/90th percentile.

    Returns (low_centroid, high_centroid, labels) with label 0 for the
    low-centroid cluster. Collapses to a single cluster (equal centroids,
    all labels 0) when the data cannot be split.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("cannot cluster an empty set")
    c_low, c_high = np.percentile(v, [10.0, 90.0])
    if c_high <= c_low:
        return float(c_low), float(c_low), np.zeros(v.size, dtype=int)
    labels = np.zeros(v.size, dtype=int)
    for _ in range(max_iter):
        new_labels = (np.abs(v - c_high) < np.abs(v - c_low)).astype(int)
        if not np.any(new_labels) or np.all(new_labels):
            return float(c_low), float(c_low), np.zeros(v.size, dtype=int)
        new_low = float(np.mean(v[new_labels == 0]))
        new_high = float(np.mean(v[new_labels == 1]))
        if np.array_equal(new_labels, labels) and new_low == c_low and new_high == c_high:
            break
        labels, c_low, c_high = new_labels, new_low, new_high
    return c_low, c_high, labels


def _features(scaleout: np.ndarray, rate: np.ndarray) -> np.ndarray:
    s = np.asarray(scaleout, dtype=float)
    r = np.asarray(rate, dtype=float)
    return np.column_stack([np.ones_like(s), s, r, s * r, s * s, r * r])


@dataclass(frozen=True)
class LatencyModel:
    """Latency prediction plus validity classification (normal vs unstable)."""

    coef: tuple[float, ...]
    params: PreprocessParams
    cluster_boundary: float  # in preprocessed space; +inf when degenerate
    scaleout_bounds: tuple[float, float]
    rate_bounds: tuple[float, float]

    def predict(self, scaleout: float, rate: float) -> tuple[float, int]:
        """Predicted (L_avg in ms, cluster label) at a scaleout and rate.

        Queries outside the training region are clamped to its bounding box.
        """
        if scaleout < 1:
            raise ValueError("scaleout must be >= 1")
        if rate < 0:
            raise ValueError("rate must be >= 0")
        s = min(max(scaleout, self.scaleout_bounds[0]), self.scaleout_bounds[1])
        r = min(max(rate, self.rate_bounds[0]), self.rate_bounds[1])
        features = (1.0, s, r, s * r, s * s, r * r)
        pred = sum(c * x for c, x in zip(self.coef, features))
        l_avg = max(pred, PREPROCESS_EPS)
        l_c = 0 if preprocess_latency(l_avg, self.params) < self.cluster_boundary else 1
        return l_avg, l_c


def fit_latency_model(data: "ProfilingDataset") -> LatencyModel:
    """Least-squares fit of latency on {1, s, r, s*r, s^2, r^2} over all
    profiling records (valid and invalid), plus the 2-means validity boundary.
    """
    records = list(data.records)
    scaleouts = np.array([rec.scaleout for rec in records], dtype=float)
    rates = np.array([rec.offered_rate for rec in records], dtype=float)
    lats = np.array([rec.avg_latency_ms for rec in records], dtype=float)
    if len(records) < 6 or len(set(scaleouts)) < 2 or len(set(rates)) < 3:
        raise InsufficientDataError(
            "need >= 6 records spanning >= 2 scaleouts and >= 3 rates, "
            f"have {len(records)} records / {len(set(scaleouts))} scaleouts / "
            f"{len(set(rates))} rates"
        )

    X = _features(scaleouts, rates)
    coef, _, rank, _ = np.linalg.lstsq(X, lats, rcond=None)
    if rank < 3 or not np.all(np.isfinite(coef)):
        raise DegenerateFitError(f"singular design matrix (rank {rank})")

    p1, p99 = np.percentile(lats, [1.0, 99.0])
    params = PreprocessParams(p1=float(p1), p99=float(p99))
    pre = np.array([preprocess_latency(x, params) for x in lats])
    c_low, c_high, _ = two_means(pre)
    boundary = math.inf if c_high <= c_low else (c_low + c_high) / 2.0

    return LatencyModel(
        coef=tuple(float(c) for c in coef),
        params=params,
        cluster_boundary=boundary,
        scaleout_bounds=(float(scaleouts.min()), float(scaleouts.max())),
        rate_bounds=(float(rates.min()), float(rates.max())),
    )


def predict_latency(model: LatencyModel, scaleout: float, rate: float) -> tuple[float, int]:
    return model.predict(scaleout, rate)


@dataclass(frozen=True)
class CapacityModel:
    """Monotone piecewise-linear map from scaleout to max processing rate."""

    scaleouts: tuple[float, ...]
    capacities: tuple[float, ...]

    def __call__(self, scaleout: float) -> float:
        s = np.asarray(self.scaleouts)
        c = np.asarray(self.capacities)
        if scaleout <= s[0]:
            slope = (c[1] - c[0]) / (s[1] - s[0])
            value = c[0] + slope * (scaleout - s[0])
        elif scaleout >= s[-1]:
            slope = (c[-1] - c[-2]) / (s[-1] - s[-2])
            value = c[-1] + slope * (scaleout - s[-1])
        else:
            value = np.interp(scaleout, s, c)
        return float(max(value, 0.0))

    def updated(self, scaleout: int, capacity: float) -> "CapacityModel":
        """New model with one breakpoint replaced/inserted, kept monotone."""
        points = dict(zip(self.scaleouts, self.capacities))
        points[float(scaleout)] = float(capacity)
        return fit_capacity_model(points)


def fit_capacity_model(tmax_points: Mapping[int | float, float]) -> CapacityModel:
    """Monotone piecewise-linear interpolation through discovered capacities."""
    if len(tmax_points) < 2:
        raise InsufficientPointsError("need >= 2 capacity points")
    items = sorted((float(s), float(c)) for s, c in tmax_points.items())
    scales = [s for s, _ in items]
    caps = np.maximum.accumulate([max(c, 0.0) for _, c in items])
    return CapacityModel(scaleouts=tuple(scales), capacities=tuple(float(c) for c in caps))


@dataclass(frozen=True)
class RecoveryEstimate:
    """Estimated recovery time R = D + C with its components.

    ``n_steps`` counts the evaluated catch-up terms. When the catch-up
    sequence diverges the estimate is infeasible and R is infinite.
    """

    R: float
    D: float
    C: float
    n_steps: int
    projected_tavg: float
    feasible: bool


def estimate_recovery(
    capacity: CapacityModel,
    scaleout: float,
    f: TimeSeries,
    t0: float,
    checkpoint_interval_s: float,
    downtime_s: float,
    *,
    epsilon_s: float = 1.0,
    max_steps: int = 200,
    bin_count: int = 5,
) -> RecoveryEstimate:
    """Recovery-time estimate for a scaleout against the workload series ``f``.

    The first catch-up term covers the backlog replayed from the last
    checkpoint through the outage; each further term covers the work arriving
    while the previous term was processed. Iteration stops once a term drops
    below ``epsilon_s``. ``projected_tavg`` is the largest averaging-bin mean
    of ``f`` over (t0, end-of-series), the prospective workload the optimizer
    evaluates latencies at.
    """
    if epsilon_s <= 0:
        raise ValueError("epsilon_s must be positive")
    if checkpoint_interval_s < 0 or downtime_s < 0:
        raise ValueError("checkpoint interval and downtime must be >= 0")
    if not len(f):
        raise DomainError("workload series is empty")
    if f.start > t0 - checkpoint_interval_s + 1e-6:
        raise DomainError(
            f"series must cover the checkpoint window [{t0 - checkpoint_interval_s:g}, {t0:g}]"
        )

    horizon = f.end - t0
    if horizon > 0:
        bins = f.bin_means(t0, horizon, bin_count)
        projected_tavg = max(b.mean_value for b in bins)
    else:
        projected_tavg = f.value_at(t0)

    tmax = capacity(scaleout)
    if tmax <= 0:
        return RecoveryEstimate(INFEASIBLE, downtime_s, INFEASIBLE, 0, projected_tavg, False)

    def infeasible(n: int) -> RecoveryEstimate:
        return RecoveryEstimate(INFEASIBLE, downtime_s, INFEASIBLE, n, projected_tavg, False)

    c = f.integrate(t0 - checkpoint_interval_s, t0 + downtime_s) / tmax
    t_k = t0 + downtime_s
    total = c
    n_steps = 1
    nondecreasing = 0
    while c >= epsilon_s:
        if n_steps > max_steps:
            return infeasible(n_steps)
        try:
            c_next = f.integrate(t_k, t_k + c) / tmax
        except DomainError:
            # the catch-up walk left the forecastable horizon
            return infeasible(n_steps)
        t_k += c
        total += c_next
        n_steps += 1
        if c_next >= c and c_next >= epsilon_s:
            nondecreasing += 1
            if nondecreasing >= 3:
                return infeasible(n_steps)
        else:
            nondecreasing = 0
        c = c_next

    return RecoveryEstimate(
        R=downtime_s + total,
        D=downtime_s,
        C=total,
        n_steps=n_steps,
        projected_tavg=projected_tavg,
        feasible=True,
    )


# --- persistence -----------------------------------------------------------

STORE_HEADER = "# scalebench model store v1"


def save_models(path: str | Path, latency: LatencyModel, capacity: CapacityModel) -> None:
    """Write both models to a flat key=value text file with sections."""
    lines = [STORE_HEADER, "[latency]"]
    lines.append("coef = " + ",".join(repr(c) for c in latency.coef))
    lines.append(f"p1 = {latency.params.p1!r}")
    lines.append(f"p99 = {latency.params.p99!r}")
    lines.append(f"eps = {latency.params.eps!r}")
    lines.append(f"cluster_boundary = {latency.cluster_boundary!r}")
    lines.append(f"scaleout_bounds = {latency.scaleout_bounds[0]!r},{latency.scaleout_bounds[1]!r}")
    lines.append(f"rate_bounds = {latency.rate_bounds[0]!r},{latency.rate_bounds[1]!r}")
    lines.append("[capacity]")
    pairs = ",".join(f"{s:g}:{c!r}" for s, c in zip(capacity.scaleouts, capacity.capacities))
    lines.append(f"points = {pairs}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_models(path: str | Path) -> tuple[LatencyModel, CapacityModel]:
    """Read models back from the flat text format written by save_models."""
    section = None
    fields: dict[str, dict[str, str]] = {"latency": {}, "capacity": {}}
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1]
            if section not in fields:
                raise ValueError(f"{path}: unknown section [{section}]")
            continue
        if "=" not in line or section is None:
            raise ValueError(f"{path}: malformed line {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        fields[section][key] = value

    lat = fields["latency"]
    cap = fields["capacity"]
    try:
        coef = tuple(float(x) for x in lat["coef"].split(","))
        params = PreprocessParams(p1=float(lat["p1"]), p99=float(lat["p99"]), eps=float(lat["eps"]))
        s_bounds = tuple(float(x) for x in lat["scaleout_bounds"].split(","))
        r_bounds = tuple(float(x) for x in lat["rate_bounds"].split(","))
        latency = LatencyModel(
            coef=coef,
            params=params,
            cluster_boundary=float(lat["cluster_boundary"]),
            scaleout_bounds=(s_bounds[0], s_bounds[1]),
            rate_bounds=(r_bounds[0], r_bounds[1]),
        )
        points = {}
        for pair in cap["points"].split(","):
            s, c = pair.split(":")
            points[float(s)] = float(c)
        capacity_model = fit_capacity_model(points)
    except (KeyError, IndexError) as exc:
        raise ValueError(f"{path}: missing field {exc}") from exc
    return latency, capacity_model


# --- runtime updates -------------------------------------------------------


class RuntimeModelUpdater:
    """Keeps the models aligned with runtime metrics during an experiment.

    New (scaleout, rate, latency) observations are appended to the training
    records and the latency model is refit every ``refit_every`` evaluations.
    A capacity breakpoint is raised only when a catch-up phase empirically
    drains faster than the recorded maximum. Refits that fail keep the
    previous model (fail-safe).
    """

    def __init__(
        self,
        latency_model: LatencyModel,
        capacity_model: CapacityModel,
        dataset: "ProfilingDataset",
        refit_every: int = 6,
    ):
        self.latency_model = latency_model
        self.capacity_model = capacity_model
        self._dataset = dataset
        self._refit_every = max(int(refit_every), 1)
        self._pending = 0

    def observe_evaluation(self, scaleout: int, rate: float, latency_ms: float) -> None:
        from .profiler import ProfilingRecord  # deferred: avoids import cycle

        self._dataset.records.append(
            ProfilingRecord(scaleout=scaleout, offered_rate=rate, avg_latency_ms=latency_ms, valid=True)
        )
        self._pending += 1
        if self._pending >= self._refit_every:
            self._pending = 0
            try:
                self.latency_model = fit_latency_model(self._dataset)
            except ModelError:
                pass

    def observe_drain_rate(self, scaleout: int, drain_rate: float) -> None:
        if drain_rate > self.capacity_model(scaleout):
            self.capacity_model = self.capacity_model.updated(scaleout, drain_rate)
