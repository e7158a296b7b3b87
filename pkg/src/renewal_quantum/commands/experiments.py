"""List the registered experiments."""

import json

import typer

from renewal_quantum.display.tables import display_experiments, display_schema
from renewal_quantum.pipeline.config import SCHEMA
from renewal_quantum.pipeline.experiments import list_experiments

app = typer.Typer(invoke_without_command=True)


@app.callback(invoke_without_command=True)
def list_(
    as_json: bool = typer.Option(False, "--json", help="Print the listing as JSON"),
    schema: bool = typer.Option(False, "--schema", help="Print the config schema instead"),
) -> None:
    """Show every experiment, the curve family it reproduces and its bundled configs."""
    if schema:
        if as_json:
            typer.echo(json.dumps(SCHEMA, indent=2))
        else:
            display_schema(SCHEMA)
        return
    experiments = list_experiments()
    if as_json:
        typer.echo(json.dumps(experiments, indent=2))
    else:
        display_experiments(experiments)
