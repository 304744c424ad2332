"""Deterministic fixed-step simulation of a checkpointed stream-processing job.

The simulator is the ground-truth environment for everything else: profiling
discovers its capacity curve, the recovery estimator is validated against its
measured recovery times, and the experiment harness drives it tick by tick.

A job runs in one of three phases:

* ``running``      processes up to its capacity, completes a checkpoint every
                   checkpoint interval of uptime
* ``down``         outage after a failure (detection + restart) or a
                   reconfiguration (restart only); nothing is processed
* ``catching_up``  post-restart backlog drain at full capacity

On restart the job rolls back to its last checkpoint, so the backlog becomes
every message offered since that checkpoint completed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np


class Phase(str, Enum):
    RUNNING = "running"
    DOWN = "down"
    CATCHING_UP = "catching_up"


@dataclass(frozen=True)
class JobProfile:
    """Synthetic job description: capacity curve and latency shape.

    ``tmax_curve`` maps scaleout to the maximum sustainable processing rate
    (msg/s) and must be strictly increasing in scaleout. Latency below
    capacity follows a congestion curve; above capacity the backlog term
    grows without bound.
    """

    tmax_curve: tuple[tuple[int, float], ...]
    base_latency_ms: float = 500.0
    queue_coeff_ms: float = 50.0
    noise_pct: float = 0.0

    def __post_init__(self):
        curve = tuple(sorted((int(s), float(c)) for s, c in dict(self.tmax_curve).items()))
        object.__setattr__(self, "tmax_curve", curve)
        if len(curve) < 1:
            raise ValueError("tmax_curve needs at least one point")
        scales = [s for s, _ in curve]
        caps = [c for _, c in curve]
        if any(b <= a for a, b in zip(caps, caps[1:])):
            raise ValueError("tmax_curve must be strictly increasing in scaleout")
        if min(scales) < 1 or min(caps) <= 0:
            raise ValueError("scaleouts must be >= 1 and capacities positive")
        if self.base_latency_ms <= 0:
            raise ValueError("base_latency_ms must be positive")
        if not 0 <= self.noise_pct < 1:
            raise ValueError("noise_pct must be in [0, 1)")

    def tmax(self, scaleout: float) -> float:
        """Capacity at any scaleout by monotone linear interpolation."""
        scales = np.array([s for s, _ in self.tmax_curve], dtype=float)
        caps = np.array([c for _, c in self.tmax_curve], dtype=float)
        if len(scales) == 1:
            return float(caps[0])
        if scaleout <= scales[0]:
            slope = (caps[1] - caps[0]) / (scales[1] - scales[0])
            return max(float(caps[0] + slope * (scaleout - scales[0])), 0.0)
        if scaleout >= scales[-1]:
            slope = (caps[-1] - caps[-2]) / (scales[-1] - scales[-2])
            return float(caps[-1] + slope * (scaleout - scales[-1]))
        return float(np.interp(scaleout, scales, caps))


@dataclass(frozen=True)
class FailureSchedule:
    """When failures are injected and how long the outage lasts."""

    injection_times: tuple[float, ...] = ()
    detection_timeout_s: float = 20.0
    restart_time_s: float = 10.0

    def __post_init__(self):
        times = tuple(float(t) for t in self.injection_times)
        object.__setattr__(self, "injection_times", times)
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("injection_times must be strictly increasing")
        if self.detection_timeout_s <= 0 or self.restart_time_s <= 0:
            raise ValueError("outage durations must be positive")

    @classmethod
    def periodic(cls, first_s: float, interval_s: float, count: int, **kw) -> "FailureSchedule":
        times = tuple(first_s + k * interval_s for k in range(count))
        return cls(injection_times=times, **kw)


@dataclass(frozen=True)
class SimConfig:
    tick_s: float = 1.0
    checkpoint_interval_s: float = 10.0
    detection_timeout_s: float = 20.0
    restart_time_s: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.tick_s <= 0:
            raise ValueError("tick_s must be positive")
        if self.checkpoint_interval_s <= 0:
            raise ValueError("checkpoint_interval_s must be positive")


@dataclass
class SimState:
    """Mutable job state; owned by exactly one Simulation instance."""

    time: float = 0.0
    scaleout: int = 1
    backlog: float = 0.0
    last_checkpoint_t: float = 0.0
    uptime: float = 0.0
    phase: Phase = Phase.RUNNING
    cumulative_container_seconds: float = 0.0
    # internal bookkeeping
    offered_since_checkpoint: float = 0.0
    outage_remaining_s: float = 0.0
    next_checkpoint_uptime: float = 0.0


@dataclass(frozen=True)
class SimMetrics:
    """One tick of observable job metrics."""

    time_s: float
    scaleout: int
    offered_rate: float
    processed_rate: float
    backlog: float
    latency_ms: float
    cpu_util: float
    phase: str
    uptime_s: float
    cum_container_s: float


METRICS_HEADER = (
    "time_s,scaleout,offered_rate,processed_rate,backlog,latency_ms,"
    "cpu_util,phase,uptime_s,cum_container_s"
)


def _caught_up(backlog: float, offered: float, tick: float) -> bool:
    return backlog < offered * tick or backlog <= 0.0


class Simulation:
    """Single job on a simulated cluster, advanced one tick at a time.

    Instances are single-threaded; run independent simulations for parallel
    deployments.
    """

    def __init__(self, profile: JobProfile, config: SimConfig, initial_scaleout: int):
        if initial_scaleout < 1:
            raise ValueError("initial_scaleout must be >= 1")
        self.profile = profile
        self.config = config
        self.state = SimState(
            scaleout=int(initial_scaleout),
            next_checkpoint_uptime=config.checkpoint_interval_s,
        )
        self.rejected_reconfigs = 0
        self._rng = np.random.default_rng(config.seed)

    def step(self, offered_rate: float) -> SimMetrics:
        """Advance one tick at the given offered rate and emit metrics."""
        st = self.state
        cfg = self.config
        tick = cfg.tick_s
        offered = max(float(offered_rate), 0.0)
        tmax = self.profile.tmax(st.scaleout)

        if st.phase is Phase.DOWN:
            processed = 0.0
            st.backlog += offered * tick
            st.offered_since_checkpoint += offered * tick
            st.outage_remaining_s -= tick
            cpu = 0.0
            if st.outage_remaining_s <= 1e-9:
                # rollback: replay everything offered since the last checkpoint
                st.backlog = st.offered_since_checkpoint
                st.phase = Phase.CATCHING_UP
                st.outage_remaining_s = 0.0
        else:
            capacity = tmax * tick
            available = st.backlog + offered * tick
            processed = min(available, capacity)
            st.backlog = available - processed
            st.offered_since_checkpoint += offered * tick
            st.uptime += tick
            if st.phase is Phase.RUNNING:
                cpu = min(1.0, offered / tmax)
                if st.uptime >= st.next_checkpoint_uptime - 1e-9:
                    st.last_checkpoint_t = st.time + tick
                    # checkpoint marks the processing position: anything still
                    # backlogged would be replayed after a failure
                    st.offered_since_checkpoint = st.backlog
                    st.next_checkpoint_uptime += cfg.checkpoint_interval_s
            else:  # catching up
                cpu = 1.0
                if _caught_up(st.backlog, offered, tick):
                    st.phase = Phase.RUNNING

        st.time += tick
        st.cumulative_container_seconds += st.scaleout * tick

        rho = offered / tmax
        latency = (
            self.profile.base_latency_ms
            + self.profile.queue_coeff_ms * rho / (1.0 - min(rho, 0.99))
            + 1000.0 * st.backlog / tmax
        )
        if self.profile.noise_pct > 0:
            latency *= 1.0 + self._rng.uniform(-self.profile.noise_pct, self.profile.noise_pct)

        return SimMetrics(
            time_s=st.time,
            scaleout=st.scaleout,
            offered_rate=offered,
            processed_rate=processed / tick,
            backlog=st.backlog,
            latency_ms=latency,
            cpu_util=cpu,
            phase=st.phase.value,
            uptime_s=st.uptime,
            cum_container_s=st.cumulative_container_seconds,
        )

    def inject_failure(self) -> bool:
        """Fail the job; no-op (returns False) unless it is running."""
        st = self.state
        if st.phase is not Phase.RUNNING:
            return False
        st.phase = Phase.DOWN
        st.outage_remaining_s = self.config.detection_timeout_s + self.config.restart_time_s
        st.uptime = 0.0
        st.next_checkpoint_uptime = self.config.checkpoint_interval_s
        return True

    def reconfigure(self, new_scaleout: int) -> bool:
        """Restart the job at a new scaleout via checkpoint rollback.

        Downtime is the restart time only (no detection delay). The new
        scaleout takes effect immediately, so catch-up drains at the new
        capacity. Rejected with a warning count if the job is not running.
        """
        st = self.state
        if int(new_scaleout) == st.scaleout:
            raise ValueError("reconfigure requires a different scaleout")
        if st.phase is not Phase.RUNNING:
            self.rejected_reconfigs += 1
            return False
        st.scaleout = int(new_scaleout)
        st.phase = Phase.DOWN
        st.outage_remaining_s = self.config.restart_time_s
        st.uptime = 0.0
        st.next_checkpoint_uptime = self.config.checkpoint_interval_s
        return True


NOT_RECOVERED = math.inf


def measured_recovery_time(
    metrics: Sequence[SimMetrics],
    failure_t: float,
    *,
    baseline_window_s: float = 120.0,
    latency_factor: float = 1.5,
) -> float:
    """Recovery time observed from a metric trace after a failure.

    The job counts as recovered at the first tick after ``failure_t`` where it
    is running again, its latency is back below ``latency_factor`` times the
    mean over the pre-failure baseline window, and the backlog is drained.
    Returns ``NOT_RECOVERED`` (inf) if that never happens before trace end.
    """
    pre = [
        m.latency_ms
        for m in metrics
        if failure_t - baseline_window_s <= m.time_s < failure_t
    ]
    if not pre:
        raise ValueError("no pre-failure samples in the baseline window")
    threshold = latency_factor * float(np.mean(pre))

    tick = None
    prev_t = None
    for m in metrics:
        if prev_t is not None and tick is None:
            tick = m.time_s - prev_t
        prev_t = m.time_s
        if m.time_s <= failure_t or tick is None:
            continue
        caught_up = _caught_up(m.backlog, m.offered_rate, tick)
        if m.phase == Phase.RUNNING.value and m.latency_ms <= threshold and caught_up:
            return m.time_s - failure_t
    return NOT_RECOVERED


class SimulatedCluster:
    """Parallel profiling deployments backed by independent simulations.

    This is the simulator implementation of the metrics-source abstraction the
    profiler runs against; live-cluster backends would implement the same
    three methods.
    """

    def __init__(self, profile: JobProfile, config: SimConfig):
        self.profile = profile
        self.config = config
        self._deployments: dict[int, Simulation] = {}

    def start(self, scaleouts: Iterable[int]) -> None:
        for s in scaleouts:
            cfg = SimConfig(
                tick_s=self.config.tick_s,
                checkpoint_interval_s=self.config.checkpoint_interval_s,
                detection_timeout_s=self.config.detection_timeout_s,
                restart_time_s=self.config.restart_time_s,
                seed=self.config.seed + int(s),
            )
            self._deployments[int(s)] = Simulation(self.profile, cfg, int(s))

    def measure(self, scaleout: int, rate: float, dwell_s: float, settle_s: float) -> float:
        """Run one deployment at a rate for the dwell; return the average
        latency over (settle, dwell]."""
        sim = self._deployments[int(scaleout)]
        tick = self.config.tick_s
        n_ticks = int(round(dwell_s / tick))
        latencies = []
        for i in range(n_ticks):
            m = sim.step(rate)
            if (i + 1) * tick > settle_s:
                latencies.append(m.latency_ms)
        if not latencies:
            raise ValueError("dwell must exceed settle")
        return float(np.mean(latencies))

    def stop(self, scaleout: int) -> None:
        self._deployments.pop(int(scaleout), None)
