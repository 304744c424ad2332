"""Experiment runner: profiling campaigns, scaling experiments with failure
injection, and report generation.

A run drives the simulator tick by tick, evaluates the configured policy on
its interval, applies rescales through checkpoint-rollback restarts, injects
failures on schedule, and writes metric/decision/report CSVs. Simulated time
is decoupled from wall-clock; hours of simulation complete in seconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autoscalers import (
    Action,
    DECISION_LOG_HEADER,
    ScalingDecision,
    decision_log_row,
    phoebe_decide,
    reactive_decide,
    static_decide,
    twres_decide,
)
from .config import ExperimentConfig
from .models import (
    CapacityModel,
    LatencyModel,
    RuntimeModelUpdater,
    fit_capacity_model,
    fit_latency_model,
    load_models,
    save_models,
)
from .profiler import ProfilingDataset, run_profiling
from .simulator import (
    METRICS_HEADER,
    Phase,
    SimMetrics,
    SimulatedCluster,
    Simulation,
    measured_recovery_time,
)
from .timeseries import TimeSeries
from .workloads import generate


class HarnessError(RuntimeError):
    pass


MODELS_FILENAME = "models.txt"
DATASET_FILENAME = "profiling_records.csv"
TMAX_FILENAME = "profiling_tmax.csv"


def run_profile(cfg: ExperimentConfig, out_dir: str | Path) -> tuple[ProfilingDataset, LatencyModel, CapacityModel]:
    """Profile the configured job on the simulator and persist the fitted models."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scaleout_set = cfg.profiler.scaleout_set()
    cluster = SimulatedCluster(cfg.job, cfg.sim)
    dataset = run_profiling(
        scaleout_set,
        cluster,
        cfg.profiler.rate_start,
        cfg.profiler.rate_step,
        cfg.profiler.dwell_s,
        cfg.profiler.settle_s,
        cluster_gap_factor=cfg.profiler.cluster_gap_factor,
        deviation_factor=cfg.profiler.deviation_factor,
    )
    latency_model = fit_latency_model(dataset)
    capacity_model = fit_capacity_model(dataset.tmax_points)
    dataset.to_csv(out / DATASET_FILENAME, out / TMAX_FILENAME)
    save_models(out / MODELS_FILENAME, latency_model, capacity_model)
    return dataset, latency_model, capacity_model


def load_persisted_models(models_dir: str | Path) -> tuple[LatencyModel, CapacityModel, ProfilingDataset]:
    models_dir = Path(models_dir)
    latency_model, capacity_model = load_models(models_dir / MODELS_FILENAME)
    dataset = ProfilingDataset.from_csv(
        models_dir / DATASET_FILENAME, models_dir / TMAX_FILENAME
    )
    return latency_model, capacity_model, dataset


@dataclass
class RecoveryRow:
    failure_t: float
    workload_at_failure: float
    measured_recovery_s: float  # inf when never recovered
    not_recovered: bool


@dataclass
class ExperimentReport:
    """Everything the comparison report needs from one run."""

    policy: str
    seed: int
    recovery_table: list[RecoveryRow]
    latency_samples: np.ndarray
    cost_curve: np.ndarray  # (time_s, cum_container_s) rows
    reconfig_count: int
    rejected_reconfigs: int
    recovery_error_pct: float
    total_cost: float
    near_optimal_fraction: float
    metrics: list[SimMetrics] = field(repr=False, default_factory=list)
    decisions: list[tuple[float, int, ScalingDecision]] = field(repr=False, default_factory=list)


def _eval_times(cfg: ExperimentConfig) -> list[float]:
    interval = cfg.policy.eval_interval_s
    if cfg.policy_name == "reactive" and cfg.policy.reactive_fast_evals:
        interval = interval / 10.0
    times = []
    t = interval
    while t <= cfg.duration_s + 1e-9:
        times.append(round(t, 9))
        t += interval
    return times


def run_experiment(
    cfg: ExperimentConfig,
    latency_model: LatencyModel | None = None,
    capacity_model: CapacityModel | None = None,
    dataset: ProfilingDataset | None = None,
    out_dir: str | Path | None = None,
    near_optimal_factor: float = 1.25,
) -> ExperimentReport:
    """Run one scaling experiment and return (and optionally persist) its report."""
    if cfg.policy_name in ("phoebe", "twres") and (latency_model is None or capacity_model is None):
        raise HarnessError(f"policy {cfg.policy_name!r} needs fitted models")

    tick = cfg.sim.tick_s
    n_ticks = int(round(cfg.duration_s / tick))
    workload = generate(cfg.workload, cfg.duration_s, tick, seed=cfg.seed)
    offered = workload.values

    sim = Simulation(cfg.job, cfg.sim, cfg.initial_scaleout)
    updater = None
    if cfg.policy_name in ("phoebe", "twres") and dataset is not None:
        # run-local copy: runtime observations must not leak across runs
        run_dataset = ProfilingDataset(
            records=list(dataset.records), tmax_points=dict(dataset.tmax_points)
        )
        updater = RuntimeModelUpdater(
            latency_model, capacity_model, run_dataset, refit_every=cfg.models.refit_every_evals
        )

    eval_times = set(_eval_times(cfg))
    failure_times = list(cfg.failure.injection_times)
    next_failure = 0

    metrics: list[SimMetrics] = []
    decisions: list[tuple[float, int, ScalingDecision]] = []
    obs_t = np.empty(n_ticks)
    obs_rate = np.empty(n_ticks)
    reconfig_count = 0

    def history_series(i: int) -> TimeSeries:
        window = cfg.policy.forecast.history_window_s
        lo = 0
        if window is not None:
            lo = max(0, i - int(round(window / tick)))
        return TimeSeries(obs_t[lo:i], obs_rate[lo:i])

    def trailing_latency_mean(window_s: float = 60.0) -> float:
        k = max(1, int(round(window_s / tick)))
        recent = metrics[-k:]
        if not recent:
            return cfg.job.base_latency_ms
        return float(np.mean([m.latency_ms for m in recent]))

    for i in range(n_ticks):
        t = round(i * tick, 9)

        if next_failure < len(failure_times) and t >= failure_times[next_failure] - 1e-9:
            sim.inject_failure()
            next_failure += 1

        if t in eval_times and i > 0:
            lat_m = updater.latency_model if updater else latency_model
            cap_m = updater.capacity_model if updater else capacity_model
            current = sim.state.scaleout
            if cfg.policy_name == "phoebe":
                decision = phoebe_decide(
                    t, sim.state.uptime, history_series(i), current,
                    lat_m, cap_m, cfg.policy,
                )
            elif cfg.policy_name == "reactive":
                cpu = metrics[-1].cpu_util if metrics else 0.0
                decision = reactive_decide(t, current, cpu, cfg.policy)
            elif cfg.policy_name == "twres":
                decision = twres_decide(
                    t, history_series(i), current, cap_m,
                    trailing_latency_mean(), cfg.policy,
                )
            else:
                decision = static_decide(t, cfg.policy.static_scaleout)

            if decision.action is Action.RESCALE:
                applied = sim.reconfigure(decision.target_scaleout)
                if applied:
                    reconfig_count += 1
                else:
                    decision = ScalingDecision(
                        target_scaleout=decision.target_scaleout,
                        action=Action.HOLD,
                        evidence=decision.evidence,
                        issued_at=decision.issued_at,
                    )
            decisions.append((t, current, decision))
            if updater is not None and decision.action is not Action.SKIP_RECOVERY_GATE:
                window = max(1, int(round(cfg.policy.eval_interval_s / tick)))
                recent = metrics[-window:]
                if recent:
                    updater.observe_evaluation(
                        current,
                        float(np.mean([m.offered_rate for m in recent])),
                        float(np.mean([m.latency_ms for m in recent])),
                    )

        m = sim.step(float(offered[i]))
        if updater is not None and m.phase == Phase.CATCHING_UP.value:
            updater.observe_drain_rate(m.scaleout, m.processed_rate)
        metrics.append(m)
        obs_t[i] = m.time_s
        obs_rate[i] = m.offered_rate

    report = _build_report(cfg, metrics, decisions, reconfig_count,
                           sim.rejected_reconfigs, near_optimal_factor)
    if out_dir is not None:
        write_run_artifacts(report, cfg, Path(out_dir))
    return report


def _build_report(
    cfg: ExperimentConfig,
    metrics: list[SimMetrics],
    decisions: list[tuple[float, int, ScalingDecision]],
    reconfig_count: int,
    rejected_reconfigs: int,
    near_optimal_factor: float,
) -> ExperimentReport:
    sentinel = 2.0 * cfg.policy.rc_target_s
    recovery_table = []
    for t_f in cfg.failure.injection_times:
        measured = measured_recovery_time(metrics, t_f)
        idx = min(int(round(t_f / cfg.sim.tick_s)), len(metrics) - 1)
        recovery_table.append(
            RecoveryRow(
                failure_t=t_f,
                workload_at_failure=metrics[idx].offered_rate,
                measured_recovery_s=measured,
                not_recovered=not math.isfinite(measured) or measured > sentinel,
            )
        )

    latencies = np.array([m.latency_ms for m in metrics])
    cost_curve = np.array([[m.time_s, m.cum_container_s] for m in metrics])
    finite = [r.measured_recovery_s for r in recovery_table if math.isfinite(r.measured_recovery_s)]
    error_pct = (
        float(np.mean([abs(r - cfg.policy.rc_target_s) / cfg.policy.rc_target_s for r in finite])) * 100.0
        if finite
        else float("nan")
    )
    near_optimal = float(np.mean(latencies <= near_optimal_factor * cfg.job.base_latency_ms)) if len(latencies) else 0.0
    return ExperimentReport(
        policy=cfg.policy_name,
        seed=cfg.seed,
        recovery_table=recovery_table,
        latency_samples=np.sort(latencies),
        cost_curve=cost_curve,
        reconfig_count=reconfig_count,
        rejected_reconfigs=rejected_reconfigs,
        recovery_error_pct=error_pct,
        total_cost=float(metrics[-1].cum_container_s) if metrics else 0.0,
        near_optimal_fraction=near_optimal,
        metrics=metrics,
        decisions=decisions,
    )


def write_run_artifacts(report: ExperimentReport, cfg: ExperimentConfig, out: Path) -> None:
    """Write the metric trace, decision log, and report CSVs for one run."""
    out.mkdir(parents=True, exist_ok=True)

    lines = [METRICS_HEADER]
    for m in report.metrics:
        lines.append(
            ",".join(
                [
                    repr(m.time_s),
                    str(m.scaleout),
                    repr(m.offered_rate),
                    repr(m.processed_rate),
                    repr(m.backlog),
                    repr(m.latency_ms),
                    repr(m.cpu_util),
                    m.phase,
                    repr(m.uptime_s),
                    repr(m.cum_container_s),
                ]
            )
        )
    (out / "metrics.csv").write_text("\n".join(lines) + "\n")

    lines = [DECISION_LOG_HEADER]
    for t, current, decision in report.decisions:
        lines.append(decision_log_row(t, report.policy, current, decision))
    (out / "decisions.csv").write_text("\n".join(lines) + "\n")

    lines = ["failure_t,workload_at_failure,measured_recovery_s,not_recovered"]
    for row in report.recovery_table:
        measured = "inf" if not math.isfinite(row.measured_recovery_s) else repr(row.measured_recovery_s)
        lines.append(
            f"{row.failure_t!r},{row.workload_at_failure!r},{measured},{int(row.not_recovered)}"
        )
    (out / "recovery.csv").write_text("\n".join(lines) + "\n")

    lines = ["latency_ms,cum_fraction"]
    n = len(report.latency_samples)
    for i, latency in enumerate(report.latency_samples):
        lines.append(f"{float(latency)!r},{(i + 1) / n!r}")
    (out / "ecdf.csv").write_text("\n".join(lines) + "\n")

    lines = ["time_s,cum_container_s"]
    step = max(1, int(round(60.0 / cfg.sim.tick_s)))
    for i in range(0, len(report.cost_curve), step):
        t, c = report.cost_curve[i]
        lines.append(f"{float(t)!r},{float(c)!r}")
    if len(report.cost_curve) and (len(report.cost_curve) - 1) % step != 0:
        t, c = report.cost_curve[-1]
        lines.append(f"{float(t)!r},{float(c)!r}")
    (out / "cost.csv").write_text("\n".join(lines) + "\n")

    summary = [
        f"policy = {report.policy}",
        f"seed = {report.seed}",
        f"reconfig_count = {report.reconfig_count}",
        f"rejected_reconfigs = {report.rejected_reconfigs}",
        f"total_cost_container_s = {report.total_cost!r}",
        f"recovery_error_pct = {report.recovery_error_pct!r}",
        f"near_optimal_fraction = {report.near_optimal_fraction!r}",
        f"not_recovered_failures = {sum(r.not_recovered for r in report.recovery_table)}",
    ]
    (out / "summary.txt").write_text("\n".join(summary) + "\n")


def render_report(run_dirs: list[str | Path], out_dir: str | Path) -> list[Path]:
    """Comparison plots and normalized cost summary across finished runs.

    Reads each run's artifacts from disk; emits an ECDF overlay, a cumulative
    cost overlay, a workload/scaleout overlay per run, and a recovery-time
    bar chart. Returns the written files.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    runs = []
    for run_dir in run_dirs:
        run_dir = Path(run_dir)
        summary = {}
        for line in (run_dir / "summary.txt").read_text().splitlines():
            key, _, value = line.partition(" = ")
            summary[key.strip()] = value.strip()
        runs.append((run_dir, summary))

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for run_dir, summary in runs:
        rows = _read_csv_floats(run_dir / "ecdf.csv")
        if rows.size:
            ax.plot(rows[:, 0], rows[:, 1], label=f"{summary['policy']} (seed {summary['seed']})")
    ax.set_xscale("log")
    ax.set_xlabel("latency (ms)")
    ax.set_ylabel("cumulative fraction")
    ax.set_title("End-to-end latency ECDF")
    ax.legend(fontsize=8)
    path = out / "latency_ecdf.png"
    fig.savefig(path, dpi=110)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for run_dir, summary in runs:
        rows = _read_csv_floats(run_dir / "cost.csv")
        if rows.size:
            ax.plot(rows[:, 0] / 3600.0, rows[:, 1], label=summary["policy"])
    ax.set_xlabel("time (h)")
    ax.set_ylabel("cumulative container-seconds")
    ax.set_title("Resource consumption")
    ax.legend(fontsize=8)
    path = out / "cumulative_cost.png"
    fig.savefig(path, dpi=110)
    plt.close(fig)
    written.append(path)

    fig, axes = plt.subplots(len(runs), 1, figsize=(7, 2.2 * len(runs)), squeeze=False)
    for ax, (run_dir, summary) in zip(axes[:, 0], runs):
        t, rate, scale = _read_metrics_columns(run_dir / "metrics.csv")
        ax.plot(t / 3600.0, rate, lw=0.4, color="tab:blue")
        ax2 = ax.twinx()
        ax2.step(t / 3600.0, scale, lw=0.8, color="tab:red")
        ax2.set_ylabel("scaleout", color="tab:red")
        ax.set_ylabel("msg/s", color="tab:blue")
        ax.set_title(summary["policy"], fontsize=9)
    axes[-1, 0].set_xlabel("time (h)")
    fig.tight_layout()
    path = out / "workload_scaleout.png"
    fig.savefig(path, dpi=110)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(7, 4.5))
    width = 0.8 / max(len(runs), 1)
    for k, (run_dir, summary) in enumerate(runs):
        rows = (run_dir / "recovery.csv").read_text().splitlines()[1:]
        measured = [float(r.split(",")[2]) if r.split(",")[2] != "inf" else math.nan for r in rows]
        xs = np.arange(1, len(measured) + 1) + k * width
        ax.bar(xs, measured, width=width, label=summary["policy"])
    ax.set_xlabel("failure #")
    ax.set_ylabel("measured recovery (s)")
    ax.set_title("Recovery times per injected failure")
    ax.legend(fontsize=8)
    path = out / "recovery_times.png"
    fig.savefig(path, dpi=110)
    plt.close(fig)
    written.append(path)

    lines = ["policy,seed,total_cost,normalized_cost,reconfig_count,not_recovered"]
    baseline = None
    for run_dir, summary in runs:
        if summary["policy"] == "static":
            cost = float(summary["total_cost_container_s"])
            baseline = max(baseline or 0.0, cost)
    for run_dir, summary in runs:
        cost = float(summary["total_cost_container_s"])
        normalized = cost / baseline if baseline else math.nan
        lines.append(
            f"{summary['policy']},{summary['seed']},{cost!r},{normalized!r},"
            f"{summary['reconfig_count']},{summary['not_recovered_failures']}"
        )
    path = out / "comparison.csv"
    path.write_text("\n".join(lines) + "\n")
    written.append(path)
    return written


def _read_csv_floats(path: Path) -> np.ndarray:
    lines = path.read_text().splitlines()[1:]
    if not lines:
        return np.empty((0, 2))
    return np.array([[float(x) for x in line.split(",")] for line in lines])


def _read_metrics_columns(path: Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    t, rate, scale = [], [], []
    with open(path) as fh:
        next(fh)
        for line in fh:
            parts = line.rstrip("\n").split(",")
            t.append(float(parts[0]))
            scale.append(float(parts[1]))
            rate.append(float(parts[2]))
    return np.array(t), np.array(rate), np.array(scale)
