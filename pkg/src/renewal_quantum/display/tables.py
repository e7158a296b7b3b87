"""Rich terminal display formatters."""

import math

from rich import box
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

console = Console()

# ---------------------------------------------------------------------------
# Formatting helpers
# ---------------------------------------------------------------------------


def format_pass_fail(passed: bool) -> str:
    """Return a Rich-markup coloured PASS or FAIL string.

    Args:
        passed: ``True`` for PASS, ``False`` for FAIL.

    Returns:
        Rich-markup string.
    """
    return "[green]PASS[/green]" if passed else "[red]FAIL[/red]"


def format_value(value) -> str:
    """Format a check value or threshold for a table cell.

    Floats use four significant digits and switch to scientific notation
    below ``1e-3``; ``None`` and NaN become ``"N/A"``.
    """
    if value is None:
        return "N/A"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, (int, float)):
        value = float(value)
        if math.isnan(value):
            return "N/A"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if value != 0 and abs(value) < 1e-3:
            return f"{value:.2e}"
        return f"{value:.4g}"
    return str(value)


def format_seconds(seconds: float) -> str:
    if seconds < 60:
        return f"{seconds:.1f} s"
    minutes, rest = divmod(seconds, 60)
    return f"{int(minutes)} min {rest:.0f} s"


# ---------------------------------------------------------------------------
# Display functions
# ---------------------------------------------------------------------------


def display_experiments(experiments: list[dict]) -> None:
    """Table of the registered experiments.

    Args:
        experiments: Dicts with ``name``, ``description``, ``reproduces`` and
            ``configs`` keys.
    """
    table = Table(title="Experiments", box=box.ROUNDED, show_lines=True)
    table.add_column("Experiment", style="bold cyan", no_wrap=True)
    table.add_column("Description")
    table.add_column("Curve family")
    table.add_column("Bundled configs", style="dim")
    for item in experiments:
        table.add_row(item["name"], item["description"], item["reproduces"], "\n".join(item["configs"]))
    console.print(table)


def schema_rows(schema: dict, prefix: str = "") -> list[tuple[str, str]]:
    """Flatten a JSON Schema into ``(dotted key, description)`` rows."""
    rows = []
    required = set(schema.get("required", ()))
    for key, node in schema.get("properties", {}).items():
        path = f"{prefix}.{key}" if prefix else key
        meaning = node.get("description") or node.get("type", "")
        if key in required:
            meaning = f"{meaning} (required)"
        rows.append((path, meaning))
        rows.extend(schema_rows(node, path))
    return rows


def display_schema(schema: dict) -> None:
    table = Table(title=schema.get("title", "Config schema"), box=box.ROUNDED)
    table.add_column("Key", style="bold cyan", no_wrap=True)
    table.add_column("Meaning")
    for key, meaning in schema_rows(schema):
        table.add_row(key, meaning)
    console.print(table)


def display_checks(rows: list[dict], title: str) -> None:
    """Panel with one row per check: result, value, threshold and reason.

    Args:
        rows: Result dicts carrying a ``check`` name.
        title: Panel title.
    """
    detail = Table(box=box.SIMPLE, show_header=True, expand=True)
    detail.add_column("Check", style="bold", ratio=2)
    detail.add_column("Result", justify="center", ratio=1)
    detail.add_column("Value", justify="right", ratio=1)
    detail.add_column("Threshold", justify="right", ratio=1)
    detail.add_column("Reason", ratio=4)
    for row in rows:
        detail.add_row(
            row["check"],
            format_pass_fail(row["pass"]),
            format_value(row.get("value")),
            format_value(row.get("threshold")),
            row.get("reason", ""),
        )
    passed = all(row["pass"] for row in rows)
    failed = sum(1 for row in rows if not row["pass"])
    panel = Panel(
        renderable=detail,
        title=title,
        subtitle=f"{format_pass_fail(passed)}  {len(rows) - failed}/{len(rows)} checks",
        border_style="green" if passed else "red",
        box=box.ROUNDED,
        padding=(1, 2),
    )
    console.print()
    console.print(panel)
    console.print()


def display_run_summary(experiment: str, output: str, summary: dict, meta: dict) -> None:
    """Key/value table closing an experiment run."""
    table = Table(title=f"{experiment} finished", box=box.ROUNDED)
    table.add_column("Item", style="bold")
    table.add_column("Value", justify="right")
    table.add_row("CSV", output)
    table.add_row("Rows", str(meta.get("rows", "N/A")))
    if meta.get("seed") is not None:
        table.add_row("Seed", str(meta["seed"]))
    table.add_row("Wall time", format_seconds(meta.get("wall_time", 0.0)))
    for key, value in summary.items():
        table.add_row(key, format_value(value))
    console.print(table)
