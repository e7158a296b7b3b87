"""Main CLI entry point for renewal-quantum."""

import logging

import typer
from rich.logging import RichHandler

from renewal_quantum.commands.experiments import app as list_app
from renewal_quantum.commands.run import app as run_app
from renewal_quantum.display.tables import console

app = typer.Typer(
    name="renewal-quantum",
    help="Renewal-event simulator for non-Markovian open quantum dynamics: aging, regression and linear response.",
    no_args_is_help=True,
)


@app.callback()
def main(
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Log debug detail"),
) -> None:
    """Configure logging; warnings from the library are routed into it."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, show_path=False, markup=False)],
        force=True,
    )
    logging.captureWarnings(True)


app.add_typer(run_app, name="run", help="Run an experiment from a JSON config")
app.add_typer(list_app, name="list", help="List experiments and bundled configs")


if __name__ == "__main__":
    app()
