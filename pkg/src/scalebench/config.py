"""Experiment configuration: plain structured text with sections.

Keys are grouped by module, e.g.::

    [sim]
    tick_s = 1.0
    checkpoint_interval_s = 10

    [job]
    tmax_curve = 2:20000, 5:50000, 8:80000

A single master seed drives every stochastic component; per-component seeds
are derived deterministically from it.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .autoscalers import PolicyConfig
from .forecasting import ForecastConfig
from .profiler import ScaleoutSet, build_scaleout_set
from .simulator import FailureSchedule, JobProfile, SimConfig
from .workloads import WorkloadSpec

POLICY_NAMES = ("phoebe", "reactive", "twres", "static")


class ConfigError(ValueError):
    """Invalid or incomplete experiment configuration."""


@dataclass(frozen=True)
class ProfilerConfig:
    s_min: int = 2
    s_max: int = 24
    s_count: int = 8
    rate_start: float = 10_000.0
    rate_step: float = 10_000.0
    dwell_s: float = 60.0
    settle_s: float = 30.0
    cluster_gap_factor: float = 2.0
    deviation_factor: float = 2.0

    def scaleout_set(self) -> ScaleoutSet:
        return build_scaleout_set(self.s_min, self.s_max, self.s_count)


@dataclass(frozen=True)
class ModelsConfig:
    epsilon_s: float = 1.0
    max_steps: int = 200
    bin_count: int = 5
    refit_every_evals: int = 6


@dataclass
class ExperimentConfig:
    """Everything one experiment run needs, assembled from a config file."""

    duration_s: float
    seed: int
    initial_scaleout: int
    policy_name: str
    workload: WorkloadSpec
    job: JobProfile
    sim: SimConfig
    failure: FailureSchedule
    policy: PolicyConfig
    profiler: ProfilerConfig
    models: ModelsConfig

    def with_seed(self, seed: int) -> "ExperimentConfig":
        sim = dataclasses.replace(self.sim, seed=seed + 1)
        return dataclasses.replace(self, seed=seed, sim=sim)


def _get(section, key, cast, default=None, required=False):
    if key not in section:
        if required:
            raise ConfigError(f"missing key {key!r} in [{section.name}]")
        return default
    raw = section[key].strip()
    try:
        if cast is bool:
            return raw.lower() in ("1", "true", "yes", "on")
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {section.name}.{key}: {raw!r}") from exc


def _parse_curve(raw: str) -> tuple[tuple[int, float], ...]:
    pairs = []
    for chunk in raw.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            s, c = chunk.split(":")
            pairs.append((int(s), float(c)))
        except ValueError as exc:
            raise ConfigError(f"bad tmax_curve entry {chunk!r}; expected scaleout:capacity") from exc
    if not pairs:
        raise ConfigError("job.tmax_curve is empty")
    return tuple(pairs)


def _parse_times(raw: str) -> tuple[float, ...]:
    return tuple(float(x) for x in raw.split(",") if x.strip())


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse and validate an experiment config file."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")

    def section(name):
        if name not in parser:
            parser.add_section(name)
        return parser[name]

    exp = section("experiment")
    duration_s = _get(exp, "duration_s", float, required=True)
    seed = _get(exp, "seed", int, default=1)
    initial_scaleout = _get(exp, "initial_scaleout", int, default=None)

    wl = section("workload")
    kind = _get(wl, "kind", str, required=True)
    try:
        if kind == "sinusoid":
            workload = WorkloadSpec.sinusoid(
                mean=_get(wl, "mean", float, required=True),
                amplitude=_get(wl, "amplitude", float, required=True),
                period_s=_get(wl, "period_s", float, required=True),
                variance_pct=_get(wl, "variance_pct", float, default=0.0),
                phase_s=_get(wl, "phase_s", float, default=0.0),
            )
        elif kind == "constant":
            workload = WorkloadSpec.constant(
                level=_get(wl, "level", float, required=True),
                variance_pct=_get(wl, "variance_pct", float, default=0.0),
            )
        elif kind == "ramp":
            workload = WorkloadSpec.ramp(
                level=_get(wl, "level", float, required=True),
                slope=_get(wl, "slope", float, default=0.0),
                variance_pct=_get(wl, "variance_pct", float, default=0.0),
            )
        elif kind == "trace":
            trace_path = _get(wl, "path", str, required=True)
            if not Path(trace_path).exists():
                raise ConfigError(f"workload trace does not exist: {trace_path}")
            workload = WorkloadSpec.trace(
                trace_path, variance_pct=_get(wl, "variance_pct", float, default=0.0)
            )
        else:
            raise ConfigError(f"unknown workload.kind {kind!r}")
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    job_sec = section("job")
    try:
        job = JobProfile(
            tmax_curve=_parse_curve(_get(job_sec, "tmax_curve", str, required=True)),
            base_latency_ms=_get(job_sec, "base_latency_ms", float, default=500.0),
            queue_coeff_ms=_get(job_sec, "queue_coeff_ms", float, default=50.0),
            noise_pct=_get(job_sec, "noise_pct", float, default=0.0),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    sim_sec = section("sim")
    sim = SimConfig(
        tick_s=_get(sim_sec, "tick_s", float, default=1.0),
        checkpoint_interval_s=_get(sim_sec, "checkpoint_interval_s", float, default=10.0),
        detection_timeout_s=_get(sim_sec, "detection_timeout_s", float, default=20.0),
        restart_time_s=_get(sim_sec, "restart_time_s", float, default=10.0),
        seed=seed + 1,
    )

    fail_sec = section("failure")
    if "injection_times" in fail_sec:
        times = _parse_times(fail_sec["injection_times"])
    elif "first_s" in fail_sec:
        first = _get(fail_sec, "first_s", float, required=True)
        interval = _get(fail_sec, "interval_s", float, required=True)
        count = _get(fail_sec, "count", int, required=True)
        times = tuple(first + k * interval for k in range(count))
    else:
        times = ()
    try:
        failure = FailureSchedule(
            injection_times=times,
            detection_timeout_s=sim.detection_timeout_s,
            restart_time_s=sim.restart_time_s,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if times and times[-1] > duration_s:
        raise ConfigError(
            f"last injection at {times[-1]:g} s exceeds duration {duration_s:g} s"
        )

    fc_sec = section("forecast")
    forecast_cfg = ForecastConfig(
        method=_get(fc_sec, "method", str, default="holt-linear"),
        horizon_s=_get(fc_sec, "horizon_s", float, default=600.0),
        seasonal_period_s=_get(fc_sec, "seasonal_period_s", float, default=3600.0),
        holt_alpha=_get(fc_sec, "holt_alpha", float, default=0.5),
        holt_beta=_get(fc_sec, "holt_beta", float, default=0.1),
        history_window_s=_get(fc_sec, "history_window_s", float, default=None),
    )

    prof_sec = section("profiler")
    profiler_cfg = ProfilerConfig(
        s_min=_get(prof_sec, "s_min", int, default=2),
        s_max=_get(prof_sec, "s_max", int, default=24),
        s_count=_get(prof_sec, "s_count", int, default=8),
        rate_start=_get(prof_sec, "rate_start", float, default=10_000.0),
        rate_step=_get(prof_sec, "rate_step", float, default=10_000.0),
        dwell_s=_get(prof_sec, "dwell_s", float, default=60.0),
        settle_s=_get(prof_sec, "settle_s", float, default=30.0),
        cluster_gap_factor=_get(prof_sec, "cluster_gap_factor", float, default=2.0),
        deviation_factor=_get(prof_sec, "deviation_factor", float, default=2.0),
    )

    models_sec = section("models")
    models_cfg = ModelsConfig(
        epsilon_s=_get(models_sec, "epsilon_s", float, default=1.0),
        max_steps=_get(models_sec, "max_steps", int, default=200),
        bin_count=_get(models_sec, "bin_count", int, default=5),
        refit_every_evals=_get(models_sec, "refit_every_evals", int, default=6),
    )

    pol_sec = section("policy")
    policy_name = _get(pol_sec, "name", str, default="static")
    if policy_name not in POLICY_NAMES:
        raise ConfigError(f"policy.name must be one of {POLICY_NAMES}, got {policy_name!r}")
    try:
        scaleout_set = profiler_cfg.scaleout_set()
        policy = PolicyConfig(
            eval_interval_s=_get(pol_sec, "eval_interval_s", float, default=600.0),
            rc_target_s=_get(pol_sec, "rc_target_s", float, default=180.0),
            rc_downtime_s=_get(
                pol_sec, "rc_downtime_s", float,
                default=sim.detection_timeout_s + sim.restart_time_s,
            ),
            checkpoint_interval_s=sim.checkpoint_interval_s,
            scaleout_set=scaleout_set,
            forecast=forecast_cfg,
            epsilon_s=models_cfg.epsilon_s,
            max_steps=models_cfg.max_steps,
            bin_count=models_cfg.bin_count,
            latency_constraint_ms=_get(pol_sec, "latency_constraint_ms", float, default=2000.0),
            target_cpu_util=_get(pol_sec, "target_cpu_util", float, default=0.35),
            reactive_tolerance=_get(pol_sec, "reactive_tolerance", float, default=0.1),
            reactive_fast_evals=_get(pol_sec, "reactive_fast_evals", bool, default=False),
            static_scaleout=_get(pol_sec, "static_scaleout", int, default=scaleout_set.max),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    if initial_scaleout is None:
        initial_scaleout = (
            policy.static_scaleout if policy_name == "static" else scaleout_set.max
        )

    return ExperimentConfig(
        duration_s=duration_s,
        seed=seed,
        initial_scaleout=initial_scaleout,
        policy_name=policy_name,
        workload=workload,
        job=job,
        sim=sim,
        failure=failure,
        policy=policy,
        profiler=profiler_cfg,
        models=models_cfg,
    )
