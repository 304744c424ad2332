import math

import numpy as np
import pytest
from click.testing import CliRunner

from scalebench.cli import main
from scalebench.config import ConfigError, load_config
from scalebench.harness import (
    ExperimentReport,
    load_persisted_models,
    render_report,
    run_experiment,
    run_profile,
    write_run_artifacts,
)

CONFIG_TEMPLATE = """
[experiment]
duration_s = {duration}
seed = {seed}

[workload]
kind = {workload_kind}
{workload_body}

[job]
tmax_curve = 2:20000, 5:50000, 8:80000, 11:110000, 15:150000, 18:180000, 21:210000, 24:240000
base_latency_ms = 500
queue_coeff_ms = 2.0
noise_pct = 0.05

[sim]
tick_s = 1.0
checkpoint_interval_s = 10
detection_timeout_s = 20
restart_time_s = 10

[failure]
{failure_body}

[forecast]
method = {forecast_method}
horizon_s = 600
seasonal_period_s = 1800
history_window_s = 3600

[policy]
name = {policy}
eval_interval_s = 600
rc_target_s = 120
static_scaleout = {static_scaleout}

[profiler]
s_min = 2
s_max = 24
s_count = 8
rate_start = 10000
rate_step = 10000
dwell_s = 60
settle_s = 30
"""


def write_config(
    tmp_path,
    policy="static",
    duration=3600,
    seed=1,
    workload_kind="constant",
    workload_body="level = 50000",
    failure_body="injection_times = 1500",
    forecast_method="holt-linear",
    static_scaleout=24,
    name="exp.ini",
):
    path = tmp_path / name
    path.write_text(
        CONFIG_TEMPLATE.format(
            policy=policy,
            duration=duration,
            seed=seed,
            workload_kind=workload_kind,
            workload_body=workload_body,
            failure_body=failure_body,
            forecast_method=forecast_method,
            static_scaleout=static_scaleout,
        )
    )
    return path


class TestConfig:
    def test_loads_and_validates(self, tmp_path):
        cfg = load_config(write_config(tmp_path))
        assert cfg.duration_s == 3600
        assert cfg.job.tmax_curve[0] == (2, 20_000.0)
        assert cfg.policy.scaleout_set.scaleouts == (2, 5, 8, 11, 15, 18, 21, 24)
        assert cfg.failure.injection_times == (1500.0,)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.ini")

    def test_missing_required_key(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[experiment]\nseed = 1\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_injection_beyond_duration(self, tmp_path):
        path = write_config(tmp_path, failure_body="injection_times = 99999")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_bad_policy_name(self, tmp_path):
        path = write_config(tmp_path, policy="magic")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_seed_override(self, tmp_path):
        cfg = load_config(write_config(tmp_path)).with_seed(42)
        assert cfg.seed == 42
        assert cfg.sim.seed == 43

    def test_default_downtime_is_detection_plus_restart(self, tmp_path):
        cfg = load_config(write_config(tmp_path))
        assert cfg.policy.rc_downtime_s == 30.0


class TestRunProfile:
    def test_persists_and_reloads(self, tmp_path):
        cfg = load_config(write_config(tmp_path))
        out = tmp_path / "models"
        dataset, latency_model, capacity_model = run_profile(cfg, out)
        assert (out / "models.txt").exists()
        lat2, cap2, ds2 = load_persisted_models(out)
        assert cap2(8) == capacity_model(8)
        assert len(ds2.records) == len(dataset.records)

    def test_capacity_matches_ground_truth_within_one_step(self, tmp_path):
        cfg = load_config(write_config(tmp_path))
        _, _, capacity_model = run_profile(cfg, tmp_path / "models")
        for s in (2, 5, 8, 11, 15, 18, 21, 24):
            assert 10_000.0 * s - 10_000.0 < capacity_model(s) <= 10_000.0 * s

    def test_rerun_same_seed_byte_identical(self, tmp_path):
        cfg = load_config(write_config(tmp_path))
        run_profile(cfg, tmp_path / "a")
        run_profile(cfg, tmp_path / "b")
        for name in ("profiling_records.csv", "profiling_tmax.csv", "models.txt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


class TestRunExperiment:
    def test_static_below_capacity_is_stable(self, tmp_path):
        cfg = load_config(write_config(tmp_path, duration=3600))
        report = run_experiment(cfg)
        assert report.reconfig_count == 0
        assert report.near_optimal_fraction >= 0.9
        assert len(report.recovery_table) == 1
        assert math.isfinite(report.recovery_table[0].measured_recovery_s)

    def test_phoebe_constant_workload_reconfigures_at_most_once(self, tmp_path):
        cfg_path = write_config(tmp_path, policy="phoebe", duration=5400,
                                failure_body="injection_times =")
        cfg = load_config(cfg_path)
        dataset, latency_model, capacity_model = run_profile(cfg, tmp_path / "models")
        report = run_experiment(cfg, latency_model, capacity_model, dataset)
        assert report.reconfig_count <= 1

    def test_eval_coinciding_with_failure_is_gated(self, tmp_path):
        cfg_path = write_config(tmp_path, policy="phoebe", duration=3600,
                                failure_body="injection_times = 1800")
        cfg = load_config(cfg_path)
        dataset, latency_model, capacity_model = run_profile(cfg, tmp_path / "models")
        report = run_experiment(cfg, latency_model, capacity_model, dataset)
        decisions = {t: d for t, _, d in report.decisions}
        assert decisions[1800.0].action.value == "skip_recovery_gate"

    def test_cost_accounting_matches_metrics(self, tmp_path):
        cfg = load_config(write_config(tmp_path, duration=1800))
        report = run_experiment(cfg)
        total = sum(m.scaleout * cfg.sim.tick_s for m in report.metrics)
        assert report.total_cost == pytest.approx(total)

    def test_recovery_rows_equal_scheduled_injections(self, tmp_path):
        cfg = load_config(
            write_config(tmp_path, duration=5400, failure_body="injection_times = 1000, 2500, 4000")
        )
        report = run_experiment(cfg)
        assert len(report.recovery_table) == 3

    def test_policy_needs_models(self, tmp_path):
        cfg = load_config(write_config(tmp_path, policy="phoebe"))
        with pytest.raises(Exception):
            run_experiment(cfg)

    def test_deterministic_artifacts(self, tmp_path):
        cfg = load_config(write_config(tmp_path, duration=1800, workload_body="level = 50000\nvariance_pct = 0.1"))
        run_experiment(cfg, out_dir=tmp_path / "a")
        run_experiment(cfg, out_dir=tmp_path / "b")
        for name in ("metrics.csv", "decisions.csv", "recovery.csv", "ecdf.csv", "cost.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_different_seed_differs(self, tmp_path):
        cfg = load_config(write_config(tmp_path, duration=1800, workload_body="level = 50000\nvariance_pct = 0.1"))
        run_experiment(cfg, out_dir=tmp_path / "a")
        run_experiment(cfg.with_seed(99), out_dir=tmp_path / "b")
        assert (tmp_path / "a" / "metrics.csv").read_bytes() != (tmp_path / "b" / "metrics.csv").read_bytes()

    def test_twres_runs_against_models(self, tmp_path):
        cfg_path = write_config(
            tmp_path, policy="twres", duration=5400,
            workload_kind="sinusoid",
            workload_body="mean = 60000\namplitude = 30000\nperiod_s = 1800\nvariance_pct = 0.05",
            failure_body="injection_times = 2500",
        )
        cfg = load_config(cfg_path)
        dataset, latency_model, capacity_model = run_profile(cfg, tmp_path / "models")
        report = run_experiment(cfg, latency_model, capacity_model, dataset)
        assert report.reconfig_count >= 1

    def test_reactive_runs_without_models(self, tmp_path):
        cfg_path = write_config(
            tmp_path, policy="reactive", duration=5400,
            workload_kind="sinusoid",
            workload_body="mean = 60000\namplitude = 30000\nperiod_s = 1800\nvariance_pct = 0.05",
            failure_body="injection_times = 2500",
        )
        report = run_experiment(load_config(cfg_path))
        assert report.reconfig_count >= 1

    def test_reactive_fast_evals_flag_densifies_grid(self, tmp_path):
        import dataclasses

        cfg_path = write_config(tmp_path, policy="reactive", duration=3600,
                                failure_body="injection_times =")
        cfg = load_config(cfg_path)
        slow = run_experiment(cfg)
        fast_cfg = dataclasses.replace(cfg)
        fast_cfg.policy = dataclasses.replace(cfg.policy, reactive_fast_evals=True)
        fast = run_experiment(fast_cfg)
        slow_spacing = slow.decisions[1][0] - slow.decisions[0][0]
        fast_spacing = fast.decisions[1][0] - fast.decisions[0][0]
        assert slow_spacing == 600.0
        assert fast_spacing == 60.0


class TestArtifacts:
    def test_cost_csv_non_decreasing(self, tmp_path):
        cfg = load_config(write_config(tmp_path, duration=1800))
        run_experiment(cfg, out_dir=tmp_path / "run")
        rows = (tmp_path / "run" / "cost.csv").read_text().splitlines()[1:]
        costs = [float(r.split(",")[1]) for r in rows]
        assert costs == sorted(costs)

    def test_metrics_header_schema(self, tmp_path):
        cfg = load_config(write_config(tmp_path, duration=1800))
        run_experiment(cfg, out_dir=tmp_path / "run")
        header = (tmp_path / "run" / "metrics.csv").read_text().splitlines()[0]
        assert header == (
            "time_s,scaleout,offered_rate,processed_rate,backlog,latency_ms,"
            "cpu_util,phase,uptime_s,cum_container_s"
        )

    def test_empty_latency_series_gives_header_only_ecdf(self, tmp_path):
        cfg = load_config(write_config(tmp_path, duration=1800))
        report = ExperimentReport(
            policy="static", seed=1, recovery_table=[],
            latency_samples=np.array([]), cost_curve=np.empty((0, 2)),
            reconfig_count=0, rejected_reconfigs=0, recovery_error_pct=float("nan"),
            total_cost=0.0, near_optimal_fraction=0.0,
        )
        write_run_artifacts(report, cfg, tmp_path / "run")
        assert (tmp_path / "run" / "ecdf.csv").read_text() == "latency_ms,cum_fraction\n"

    def test_render_report_outputs(self, tmp_path):
        cfg = load_config(write_config(tmp_path, duration=1800))
        run_experiment(cfg, out_dir=tmp_path / "run_a")
        run_experiment(cfg.with_seed(2), out_dir=tmp_path / "run_b")
        written = render_report([tmp_path / "run_a", tmp_path / "run_b"], tmp_path / "figs")
        names = {p.name for p in written}
        assert names == {
            "latency_ecdf.png", "cumulative_cost.png", "workload_scaleout.png",
            "recovery_times.png", "comparison.csv",
        }
        comparison = (tmp_path / "figs" / "comparison.csv").read_text().splitlines()
        assert comparison[0] == "policy,seed,total_cost,normalized_cost,reconfig_count,not_recovered"
        assert len(comparison) == 3


class TestCli:
    def test_profile_then_run_then_report(self, tmp_path):
        runner = CliRunner()
        cfg_path = write_config(tmp_path, policy="phoebe", duration=2700,
                                failure_body="injection_times = 1500")
        result = runner.invoke(main, ["profile", "--config", str(cfg_path), "--out", str(tmp_path / "models")])
        assert result.exit_code == 0, result.output
        result = runner.invoke(
            main,
            ["run", "--config", str(cfg_path), "--models", str(tmp_path / "models"),
             "--out", str(tmp_path / "run")],
        )
        assert result.exit_code == 0, result.output
        assert (tmp_path / "run" / "metrics.csv").exists()
        result = runner.invoke(
            main, ["report", "--runs", str(tmp_path / "run"), "--out", str(tmp_path / "figs")]
        )
        assert result.exit_code == 0, result.output

    def test_config_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.ini"
        bad.write_text("[experiment]\nseed = 1\n")
        runner = CliRunner()
        result = runner.invoke(main, ["profile", "--config", str(bad), "--out", str(tmp_path / "m")])
        assert result.exit_code == 2

    def test_run_requires_models_for_phoebe(self, tmp_path):
        cfg_path = write_config(tmp_path, policy="phoebe")
        runner = CliRunner()
        result = runner.invoke(main, ["run", "--config", str(cfg_path), "--out", str(tmp_path / "r")])
        assert result.exit_code == 2

    def test_seed_override_and_repeats(self, tmp_path):
        cfg_path = write_config(tmp_path, duration=1800)
        runner = CliRunner()
        result = runner.invoke(
            main,
            ["run", "--config", str(cfg_path), "--out", str(tmp_path / "runs"),
             "--seed", "7", "--repeats", "2"],
        )
        assert result.exit_code == 0, result.output
        assert (tmp_path / "runs" / "seed_7" / "metrics.csv").exists()
        assert (tmp_path / "runs" / "seed_8" / "metrics.csv").exists()
