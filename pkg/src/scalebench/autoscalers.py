"""Scaling policies behind one decision interface.

Four policies share the ``ScalingDecision`` contract:

* ``phoebe``    proactive: walks the scaleout set in ascending order and
                picks the smallest option whose estimated recovery time meets
                the target and whose predicted latency is classified normal
* ``reactive``  utilization-driven (pod-autoscaler style proportional rule)
* ``twres``     capacity-threshold scan over the forecast demand with a
                latency-constraint guard on downscaling
* ``static``    always hold a fixed scaleout

Policies are pure functions of their inputs; the harness serializes
decision and actuation per simulated job.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping

from .forecasting import ForecastConfig, ForecastError, combined_series, forecast
from .models import (
    CapacityModel,
    LatencyModel,
    ModelError,
    RecoveryEstimate,
    estimate_recovery,
    predict_latency,
)
from .profiler import ScaleoutSet
from .timeseries import DomainError, TimeSeries


class Action(str, Enum):
    HOLD = "hold"
    RESCALE = "rescale"
    SKIP_RECOVERY_GATE = "skip_recovery_gate"


@dataclass(frozen=True)
class DecisionEvidence:
    """Model outputs behind a decision, for the decision log."""

    recovery_by_scaleout: Mapping[int, float] = field(default_factory=dict)
    projected_tavg: float | None = None
    latency_ms: float | None = None
    latency_cluster: int | None = None
    error: str | None = None


@dataclass(frozen=True)
class ScalingDecision:
    target_scaleout: int
    action: Action
    evidence: DecisionEvidence
    issued_at: float

    def __post_init__(self):
        if self.action is Action.RESCALE and self.target_scaleout is None:
            raise ValueError("rescale decisions need a target")


@dataclass(frozen=True)
class PolicyConfig:
    """Shared knobs for every policy evaluated on the same clock."""

    eval_interval_s: float
    rc_target_s: float
    rc_downtime_s: float
    checkpoint_interval_s: float
    scaleout_set: ScaleoutSet
    forecast: ForecastConfig = ForecastConfig()
    epsilon_s: float = 1.0
    max_steps: int = 200
    bin_count: int = 5
    latency_constraint_ms: float = 2000.0
    target_cpu_util: float = 0.35
    reactive_tolerance: float = 0.1
    reactive_fast_evals: bool = False
    static_scaleout: int = 1

    def __post_init__(self):
        if self.eval_interval_s <= 0:
            raise ValueError("eval_interval_s must be positive")
        if self.rc_target_s <= self.rc_downtime_s:
            raise ValueError("recovery target must exceed the assumed downtime")
        if not 0 < self.target_cpu_util <= 1:
            raise ValueError("target_cpu_util must be in (0, 1]")


def _hold(now: float, current: int, error: str | None = None) -> ScalingDecision:
    return ScalingDecision(
        target_scaleout=current,
        action=Action.HOLD,
        evidence=DecisionEvidence(error=error),
        issued_at=now,
    )


def _forecast_series(history: TimeSeries, now: float, cfg: PolicyConfig) -> TimeSeries:
    fc = forecast(
        history,
        t0=now,
        horizon=cfg.forecast.horizon_s,
        method=cfg.forecast.method,
        config=cfg.forecast,
    )
    return combined_series(history, fc)


def phoebe_decide(
    now: float,
    uptime: float,
    history: TimeSeries,
    current_scaleout: int,
    latency_model: LatencyModel,
    capacity_model: CapacityModel,
    cfg: PolicyConfig,
    *,
    recovery_fn: Callable[[int, TimeSeries], RecoveryEstimate] | None = None,
    latency_fn: Callable[[int, float], tuple[float, int]] | None = None,
) -> ScalingDecision:
    """One optimization step: smallest scaleout meeting both QoS gates.

    Evaluation is skipped while the job's uptime is shorter than the
    evaluation interval (a rollback recovery is assumed to be underway).
    Model or forecast failures produce a hold decision, never a rescale.
    ``recovery_fn`` and ``latency_fn`` exist so tests can stub the models.
    """
    if uptime < cfg.eval_interval_s:
        return ScalingDecision(
            target_scaleout=current_scaleout,
            action=Action.SKIP_RECOVERY_GATE,
            evidence=DecisionEvidence(),
            issued_at=now,
        )
    try:
        f = _forecast_series(history, now, cfg)

        if recovery_fn is None:
            def recovery_fn(s: int, series: TimeSeries) -> RecoveryEstimate:
                return estimate_recovery(
                    capacity_model,
                    s,
                    series,
                    now,
                    cfg.checkpoint_interval_s,
                    cfg.rc_downtime_s,
                    epsilon_s=cfg.epsilon_s,
                    max_steps=cfg.max_steps,
                    bin_count=cfg.bin_count,
                )

        if latency_fn is None:
            def latency_fn(s: int, rate: float) -> tuple[float, int]:
                return predict_latency(latency_model, s, rate)

        recovery_by_scaleout: dict[int, float] = {}
        projected_tavg = None
        chosen = None
        chosen_latency: tuple[float, int] | None = None
        for s in cfg.scaleout_set:
            est = recovery_fn(s, f)
            recovery_by_scaleout[s] = est.R
            projected_tavg = est.projected_tavg
            if est.feasible and est.R <= cfg.rc_target_s:
                l_avg, l_c = latency_fn(s, est.projected_tavg)
                if l_c == 0:
                    chosen = s
                    chosen_latency = (l_avg, l_c)
                    break
        s_opt = chosen if chosen is not None else cfg.scaleout_set.max
        evidence = DecisionEvidence(
            recovery_by_scaleout=recovery_by_scaleout,
            projected_tavg=projected_tavg,
            latency_ms=chosen_latency[0] if chosen_latency else None,
            latency_cluster=chosen_latency[1] if chosen_latency else None,
        )
        action = Action.RESCALE if s_opt != current_scaleout else Action.HOLD
        return ScalingDecision(s_opt, action, evidence, issued_at=now)
    except (ForecastError, ModelError, DomainError, ValueError) as exc:
        return _hold(now, current_scaleout, error=str(exc))


def reactive_decide(
    now: float,
    current_scaleout: int,
    cpu_util: float,
    cfg: PolicyConfig,
) -> ScalingDecision:
    """Proportional utilization rule with a tolerance band around the target."""
    ratio = cpu_util / cfg.target_cpu_util
    desired = math.ceil(current_scaleout * ratio)
    desired = min(max(desired, cfg.scaleout_set.min), cfg.scaleout_set.max)
    rescale = desired != current_scaleout and abs(ratio - 1.0) > cfg.reactive_tolerance
    return ScalingDecision(
        target_scaleout=desired if rescale else current_scaleout,
        action=Action.RESCALE if rescale else Action.HOLD,
        evidence=DecisionEvidence(),
        issued_at=now,
    )


def twres_decide(
    now: float,
    history: TimeSeries,
    current_scaleout: int,
    capacity_model: CapacityModel,
    current_latency_ms: float,
    cfg: PolicyConfig,
) -> ScalingDecision:
    """Capacity-threshold scan over the forecast peak demand.

    Downscales are vetoed while the current latency violates the constraint;
    the veto instead bumps the scaleout by one worker.
    """
    try:
        f = _forecast_series(history, now, cfg)
        future = f.slice(now, f.end)
        demand = float(future.values.max()) if len(future) else 0.0
        candidate = None
        for s in cfg.scaleout_set:
            if capacity_model(s) >= demand:
                candidate = s
                break
        if candidate is None:
            candidate = cfg.scaleout_set.max
        if candidate < current_scaleout and current_latency_ms > cfg.latency_constraint_ms:
            decision = min(current_scaleout + 1, cfg.scaleout_set.max)
        else:
            decision = candidate
        return ScalingDecision(
            target_scaleout=decision,
            action=Action.RESCALE if decision != current_scaleout else Action.HOLD,
            evidence=DecisionEvidence(projected_tavg=demand),
            issued_at=now,
        )
    except (ForecastError, ModelError, DomainError, ValueError) as exc:
        return _hold(now, current_scaleout, error=str(exc))


def static_decide(now: float, fixed_scaleout: int) -> ScalingDecision:
    """Always hold the configured scaleout."""
    return ScalingDecision(
        target_scaleout=fixed_scaleout,
        action=Action.HOLD,
        evidence=DecisionEvidence(),
        issued_at=now,
    )


DECISION_LOG_HEADER = (
    "time_s,policy,current_scaleout,target_scaleout,action,"
    "projected_tavg,R_chosen,L_avg_chosen,L_C_chosen"
)


def decision_log_row(time_s: float, policy: str, current: int, decision: ScalingDecision) -> str:
    ev = decision.evidence
    r_chosen = ev.recovery_by_scaleout.get(decision.target_scaleout) if ev.recovery_by_scaleout else None

    def fmt(x):
        if x is None:
            return ""
        if isinstance(x, float) and math.isinf(x):
            return "inf"
        return repr(float(x)) if isinstance(x, float) else str(x)

    return ",".join(
        [
            fmt(float(time_s)),
            policy,
            str(current),
            str(decision.target_scaleout),
            decision.action.value,
            fmt(ev.projected_tavg),
            fmt(r_chosen),
            fmt(ev.latency_ms),
            fmt(ev.latency_cluster),
        ]
    )
