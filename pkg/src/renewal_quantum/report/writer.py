"""CSV output with a metadata sidecar."""

import hashlib
import json
import platform
from pathlib import Path

import numpy as np
import pandas as pd
import scipy

from renewal_quantum import __version__

FLOAT_FORMAT = "%.17g"


def config_digest(canonical_json: str) -> str:
    """``sha256:<hex>`` of the canonical config text."""
    return "sha256:" + hashlib.sha256(canonical_json.encode("utf-8")).hexdigest()


def meta_path(csv_path: str | Path) -> Path:
    path = Path(csv_path)
    return path.with_name(path.name + ".meta.json")


def write_csv(frame: pd.DataFrame, csv_path: str | Path) -> Path:
    """Write ``frame`` with round-trip float precision; NaN becomes an empty field.

    Raises:
        OSError: If the directory cannot be created or the file written.
    """
    path = Path(csv_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="", lineterminator="\n")
    return path


def write_meta(
    csv_path: str | Path,
    experiment: str,
    canonical_json: str,
    seed: int | None,
    threads: int | None,
    wall_time: float,
    rows: int,
) -> Path:
    """Write ``<csv>.meta.json`` next to the CSV and return its path."""
    meta = {
        "experiment": experiment,
        "config_sha256": config_digest(canonical_json),
        "seed": seed,
        "threads": threads,
        "rows": rows,
        "wall_time": round(wall_time, 3),
        "versions": {
            "renewal_quantum": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pandas": pd.__version__,
        },
    }
    path = meta_path(csv_path)
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
