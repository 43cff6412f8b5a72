# src/handlers/commands.py - CLI command handlers
import json
from pathlib import Path
from typing import List, Optional

import click
import typer
from rich.console import Console
from rich.table import Table

from config.config import config
from src.core.exceptions import DarseError
from src.data.case_parser import parse_case
from src.data.replay import load_bundle
from src.data.results import write_json
from src.services.experiment import (
    ExperimentResult,
    analyze_constants as build_constants_report,
    compare as run_compare,
    prepare,
    run_experiment,
)
from src.services.scenario import ALGORITHMS, Scenario, load_scenario
from src.utils.logging_utils import get_logger

logger = get_logger(__name__)
console = Console()


def run_command(func, error_message="Command failed"):
    """Run a handler body; simulator errors become a red message and exit code 1."""
    try:
        return func()
    except DarseError as e:
        console.print(f"[bold red]{error_message}:[/bold red] {e}")
        logger.error(f"{error_message}: {e}")
        raise typer.Exit(code=1)


def _check_algorithm(algorithm: str) -> str:
    if algorithm not in ALGORITHMS:
        raise typer.BadParameter(f"expected one of {', '.join(ALGORITHMS)}", param_hint="--algorithm")
    return algorithm


def _default_out(scenario: Scenario, suffix: str) -> Path:
    return Path(config.results_dir) / f"{scenario.name}_{suffix}"


def _print_runs(result: ExperimentResult):
    table = Table(title=f"Scenario {result.scenario.name} (seed {result.scenario.seed})")
    for column in ("run", "t", "updates", "val", "mse_v", "mse_theta", "frozen", "wall [s]"):
        table.add_column(column, justify="right" if column != "run" else "left")
    for run in result.runs:
        for snapshot in run.snapshots:
            table.add_row(
                run.label,
                str(snapshot.t),
                str(snapshot.updates),
                f"{snapshot.final_val:.4e}",
                f"{snapshot.final_mse_v:.3e}",
                f"{snapshot.final_mse_theta:.3e}",
                str(snapshot.frozen_agent_updates),
                f"{snapshot.wall_time:.2f}",
            )
    console.print(table)
    for name, check in result.checks.items():
        colour = "green" if check["passed"] else "red"
        console.print(f"[{colour}]{name}: {'passed' if check['passed'] else 'failed'}[/{colour}]")
    if result.out_dir is not None:
        console.print(f"Results in [bold]{result.out_dir}[/bold]")


def simulate(
    config_file: Path = typer.Option(..., "--config", "-c", help="Scenario file (.toml, .json, .yaml)"),
    algorithm: str = typer.Option("darse", "--algorithm", "-a", help=" | ".join(ALGORITHMS)),
    seed: Optional[int] = typer.Option(None, "--seed", help="Override the scenario seed"),
    snapshots: Optional[int] = typer.Option(None, "--snapshots", help="Override the snapshot count"),
    areas: Optional[int] = typer.Option(None, "--areas", help="Override the area count"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output directory"),
):
    """Run one algorithm on a scenario."""
    _check_algorithm(algorithm)

    def body():
        scenario = load_scenario(config_file, {"seed": seed, "snapshots": snapshots, "areas": areas})
        result = run_experiment(scenario, algorithm, out_dir=out or _default_out(scenario, algorithm))
        _print_runs(result)

    run_command(body, "Simulation failed")


def compare(
    config_file: Path = typer.Option(..., "--config", "-c", help="Scenario file"),
    seed: int = typer.Option(..., "--seed", help="Seed shared by every algorithm (required)"),
    algorithms: str = typer.Option(",".join(ALGORITHMS), "--algorithms", help="Comma-separated list"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output directory"),
):
    """Run several algorithms on identical snapshots and schedules."""
    chosen: List[str] = [_check_algorithm(a.strip()) for a in algorithms.split(",") if a.strip()]

    def body():
        scenario = load_scenario(config_file)
        result = run_compare(
            scenario, seed, chosen, out_dir=out or _default_out(scenario.with_seed(seed), f"compare_s{seed}")
        )
        _print_runs(result)

    run_command(body, "Comparison failed")


def analyze_constants(
    config_file: Path = typer.Option(..., "--config", "-c", help="Scenario file"),
    samples: int = typer.Option(200, "--samples", min=1, help="State samples for the cost/singular-value extrema"),
    xi: float = typer.Option(0.25, "--xi", help="Target xi in (0, 1/2)"),
    window: Optional[int] = typer.Option(None, "--window", min=1, help="Window L (default: smallest observed)"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Write the report as JSON"),
):
    """Compute the convergence constants and the prescribed exchange count."""

    def body():
        scenario = load_scenario(config_file)
        report = build_constants_report(scenario, samples=samples, xi=xi, window=window)
        if out is not None:
            write_json(out, report)
        constants = report["constants"]
        table = Table(title=f"Convergence constants: {scenario.name}")
        table.add_column("quantity")
        table.add_column("value", justify="right")
        for key in ("omega", "sigma_min", "sigma_max", "eps_min", "eps_max", "lambda_eta", "log_D", "ell_star"):
            table.add_row(key, str(constants[key]))
        table.add_row("window L", str(report["window"]))
        table.add_row("kappa (configured)", str(report["bounds_at_configured_exchanges"]["kappa"]))
        table.add_row("payload bits", str(report["payload_bits"]))
        table.add_row("observable", str(report["observable"]))
        console.print(table)

    run_command(body, "Constant analysis failed")


def validate_case(
    case: str = typer.Argument(..., help="Case file (.m, .json) or builtin name (ieee14, ieee118)"),
    convention: Optional[str] = typer.Option(
        None, "--convention", click_type=click.Choice(["paper", "standard"]), help="Admittance convention"
    ),
):
    """Parse a case, build its grid and report what was dropped or ignored."""

    def body():
        parsed = parse_case(case)
        grid = parsed.to_grid(convention)
        console.print(
            f"[green]{parsed.name}[/green]: N={grid.N}, E={grid.E}, M={grid.layout.M}, "
            f"convention={grid.convention.value}"
        )
        if parsed.unsupported:
            table = Table(title="Unsupported features")
            for column in ("kind", "where", "detail", "action"):
                table.add_column(column)
            for feature in parsed.unsupported:
                table.add_row(feature.kind, feature.where, feature.detail, feature.action)
            console.print(table)

    run_command(body, "Case validation failed")


def replay(
    bundle: Path = typer.Option(..., "--bundle", "-b", help="Replay bundle directory"),
    algorithm: str = typer.Option("darse", "--algorithm", "-a", help=" | ".join(ALGORITHMS)),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output directory"),
):
    """Re-run an algorithm on the frozen inputs of an earlier run."""
    _check_algorithm(algorithm)

    def body():
        loaded = load_bundle(bundle)
        scenario = Scenario.model_validate(loaded.scenario)
        prepared = prepare(scenario, bundle=loaded)
        target = out or _default_out(scenario, f"replay_{algorithm}")
        result = run_experiment(scenario, algorithm, out_dir=target, prepared=prepared)
        _print_runs(result)
        console.print(json.dumps(result.replay_hashes, indent=2))

    run_command(body, "Replay failed")
