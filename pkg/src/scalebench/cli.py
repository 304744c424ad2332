"""Command-line entry points: profile, run, report.

Exit codes: 0 on success, 2 for configuration errors, 3 for runtime errors.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .config import ConfigError, load_config
from .harness import (
    HarnessError,
    load_persisted_models,
    render_report,
    run_experiment,
    run_profile,
)

EXIT_CONFIG_ERROR = 2
EXIT_RUNTIME_ERROR = 3


@click.group()
def main():
    """Autoscaling workbench for checkpointed stream-processing jobs."""


def _load(config_path: str, seed: int | None):
    cfg = load_config(config_path)
    if seed is not None:
        cfg = cfg.with_seed(seed)
    return cfg


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(), help="Experiment config file")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Output directory for dataset and models")
@click.option("--seed", type=int, default=None, help="Override the config seed")
def profile(config_path: str, out_dir: str, seed: int | None):
    """Run a profiling campaign and persist the fitted models."""
    try:
        cfg = _load(config_path, seed)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)
    try:
        dataset, _, capacity_model = run_profile(cfg, out_dir)
    except Exception as exc:
        click.echo(f"profiling failed: {exc}", err=True)
        sys.exit(EXIT_RUNTIME_ERROR)
    click.echo(f"profiled {len(dataset.tmax_points)} scaleouts, {len(dataset.records)} records")
    for s in sorted(dataset.tmax_points):
        click.echo(f"  scaleout {s}: tmax {dataset.tmax_points[s]:.0f} msg/s")
    click.echo(f"models written to {out_dir}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(), help="Experiment config file")
@click.option("--models", "models_dir", type=click.Path(), default=None, help="Directory with persisted models")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Output directory for run artifacts")
@click.option("--seed", type=int, default=None, help="Override the config seed")
@click.option("--repeats", type=int, default=1, show_default=True, help="Repeat with consecutive seeds")
@click.option("--aggregate", type=click.Choice(["median"]), default="median", show_default=True)
def run(config_path: str, models_dir: str | None, out_dir: str, seed: int | None,
        repeats: int, aggregate: str):
    """Run a scaling experiment (repeats write one subdirectory per seed)."""
    try:
        cfg = _load(config_path, seed)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)

    latency_model = capacity_model = dataset = None
    if cfg.policy_name in ("phoebe", "twres"):
        if models_dir is None:
            click.echo("config error: --models is required for phoebe/twres", err=True)
            sys.exit(EXIT_CONFIG_ERROR)
        try:
            latency_model, capacity_model, dataset = load_persisted_models(models_dir)
        except (OSError, ValueError) as exc:
            click.echo(f"cannot load models from {models_dir}: {exc}", err=True)
            sys.exit(EXIT_CONFIG_ERROR)

    out = Path(out_dir)
    reports = []
    try:
        for k in range(max(repeats, 1)):
            run_cfg = cfg.with_seed(cfg.seed + k)
            run_out = out if repeats <= 1 else out / f"seed_{run_cfg.seed}"
            reports.append(
                run_experiment(run_cfg, latency_model, capacity_model, dataset, run_out)
            )
    except HarnessError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)
    except Exception as exc:
        click.echo(f"experiment failed: {exc}", err=True)
        sys.exit(EXIT_RUNTIME_ERROR)

    for report in reports:
        ok = sum(not r.not_recovered for r in report.recovery_table)
        click.echo(
            f"seed {report.seed}: policy={report.policy} reconfigs={report.reconfig_count} "
            f"cost={report.total_cost:.0f} container-s "
            f"recovered within 2x target: {ok}/{len(report.recovery_table)} failures"
        )
    if repeats > 1:
        costs = sorted(r.total_cost for r in reports)
        click.echo(f"{aggregate} cost over {repeats} seeds: {costs[len(costs) // 2]:.0f} container-s")


@main.command()
@click.option("--runs", "run_dirs", multiple=True, required=True, type=click.Path(exists=True),
              help="Run directories to compare (repeatable)")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Output directory for figures")
def report(run_dirs: tuple[str, ...], out_dir: str):
    """Render comparison figures and CSVs for finished runs."""
    try:
        written = render_report(list(run_dirs), out_dir)
    except FileNotFoundError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)
    except Exception as exc:
        click.echo(f"report failed: {exc}", err=True)
        sys.exit(EXIT_RUNTIME_ERROR)
    for path in written:
        click.echo(f"wrote {path}")


if __name__ == "__main__":
    main()
