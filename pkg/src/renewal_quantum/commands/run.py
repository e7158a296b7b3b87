"""Run one experiment from a JSON config."""

import time
from pathlib import Path
from typing import NoReturn, Optional

import typer
from rich.markup import escape
from rich.progress import BarColumn, MofNCompleteColumn, Progress, SpinnerColumn, TextColumn, TimeElapsedColumn

from renewal_quantum.core.errors import ConfigError, NumericalGuardError
from renewal_quantum.core.trajectories import ensemble_progress
from renewal_quantum.display.tables import console, display_checks, display_run_summary
from renewal_quantum.pipeline.config import load_config
from renewal_quantum.pipeline.experiments import run_experiment
from renewal_quantum.report.writer import write_csv, write_meta

EXIT_FAILED_CHECKS = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

app = typer.Typer(invoke_without_command=True, context_settings={"allow_interspersed_args": True})


def _progress() -> Progress:
    return Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        MofNCompleteColumn(),
        TimeElapsedColumn(),
        console=console,
        transient=True,
    )


def _fail(kind: str, exc: Exception, code: int) -> NoReturn:
    console.print(f"[red]{kind}:[/red] {escape(str(exc))}")
    raise typer.Exit(code=code)


@app.callback(invoke_without_command=True)
def run(
    config_path: Optional[Path] = typer.Argument(None, help="Experiment config (JSON)"),
    config_option: Optional[Path] = typer.Option(None, "--config", "-c", help="Experiment config (JSON)"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="CSV path, replaces the config's output"),
    threads: Optional[int] = typer.Option(None, "--threads", "-t", min=1, help="Worker cap; results do not depend on it"),
    seed_override: Optional[int] = typer.Option(None, "--seed-override", min=0, help="Replace ensemble.seed"),
) -> None:
    """Run the experiment a config describes and write its CSV plus metadata sidecar."""
    if config_path is not None and config_option is not None:
        console.print("[red]Usage error:[/red] give the config either as an argument or with --config")
        raise typer.Exit(code=EXIT_CONFIG)
    path = config_path or config_option
    if path is None:
        console.print("[red]Usage error:[/red] a config path is required")
        raise typer.Exit(code=EXIT_CONFIG)

    start = time.perf_counter()
    try:
        config = load_config(path, seed_override=seed_override, out_override=None if out is None else str(out))
    except ConfigError as exc:
        _fail("Config error", exc, EXIT_CONFIG)
    except OSError as exc:
        _fail("I/O error", exc, EXIT_IO)

    console.print(f"\n[bold]{config.experiment}[/bold] from {escape(str(path))}\n")
    try:
        with _progress() as progress, ensemble_progress(progress):
            outcome = run_experiment(config, threads)
    except NumericalGuardError as exc:
        _fail("Numerical guard", exc, EXIT_NUMERICAL)

    wall_time = time.perf_counter() - start
    rows = len(outcome.frame)
    try:
        csv_path = write_csv(outcome.frame, config.output)
        write_meta(csv_path, config.experiment, config.canonical_json(), config.seed, threads, wall_time, rows)
    except OSError as exc:
        _fail("I/O error", exc, EXIT_IO)

    if outcome.checks:
        display_checks(outcome.checks, title=config.experiment)
    display_run_summary(
        config.experiment,
        str(csv_path),
        outcome.summary,
        {"rows": rows, "seed": config.seed, "wall_time": wall_time},
    )
    if outcome.passed is False:
        raise typer.Exit(code=EXIT_FAILED_CHECKS)
