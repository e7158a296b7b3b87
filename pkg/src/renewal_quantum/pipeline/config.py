"""Experiment configs: JSON documents parsed into frozen dataclasses.

Documents are validated against :data:`SCHEMA` (JSON Schema, draft 2020-12)
before any computation starts. Checks a schema cannot express, such as
Kraus completeness, matching dimensions and grid alignment, run while the
sections are built. Every error carries the dotted path of the offending key.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from jsonschema import Draft202012Validator
from jsonschema.exceptions import ValidationError, best_match

from renewal_quantum.core.errors import ConfigError, OffGridError, StructuralError
from renewal_quantum.core.numerics import GridFunction, TimeGrid
from renewal_quantum.core.qops import (
    DensityMatrix,
    Hamiltonian,
    KrausChannel,
    Observable,
    dephasing_channel,
    depolarizing_channel,
    identity_channel,
    matrix_from_pairs,
    pauli,
    precession_hamiltonian,
    projective_dephasing_channel,
    rabi_hamiltonian,
)
from renewal_quantum.core.renewal import (
    BiExponential,
    Exponential,
    MittagLeffler,
    Tabulated,
    WaitingTime,
)
from renewal_quantum.core.response import (
    Drive,
    EventPerturbation,
    classical_shift_perturbation,
    depolarizing_bias_perturbation,
    drive,
)
from renewal_quantum.core.trajectories import Model

EXPERIMENTS = (
    "aged-decay",
    "fractional-decay",
    "regression",
    "response-event",
    "response-time",
    "validate",
)

WAITING_KINDS = {
    "exponential": ("rate",),
    "biexponential": ("weight_a", "rate_a", "weight_b", "rate_b"),
    "mittag-leffler": ("alpha", "amplitude"),
    "tabulated": ("step", "density", "tail_rate"),
}

CHANNEL_PRESETS = {
    "dephasing": dephasing_channel,
    "projective-dephasing": projective_dephasing_channel,
    "depolarizing": depolarizing_channel,
    "identity": lambda: identity_channel(2),
}

OBSERVABLE_PRESETS = ("sx", "sy", "sz", "id")

PERTURBATION_OPERATORS = {
    "depolarizing-bias": ("superoperator", depolarizing_bias_perturbation),
    "classical-shift": ("event-time", classical_shift_perturbation),
}

# Sections each experiment needs besides "experiment" and "output".
REQUIRED_SECTIONS = {
    "aged-decay": ("waiting", "grid", "ages"),
    "fractional-decay": ("waiting", "grid", "ages"),
    "regression": ("waiting", "model", "grid", "ages", "ensemble"),
    "response-event": ("waiting", "grid", "perturbation", "ensemble"),
    "response-time": ("waiting", "model", "grid", "perturbation"),
    "validate": ("ensemble",),
}


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------


def _number(description: str, **bounds) -> dict:
    return {"type": "number", "description": description, **bounds}


def _positive(description: str) -> dict:
    return _number(description, exclusiveMinimum=0)


def _when(key: str, value: str, then: dict, otherwise: dict | None = None) -> dict:
    rule = {"if": {"properties": {key: {"const": value}}, "required": [key]}, "then": then}
    if otherwise is not None:
        rule["else"] = otherwise
    return rule


_PAIR = {
    "type": "array",
    "prefixItems": [{"type": "number"}, {"type": "number"}],
    "minItems": 2,
    "maxItems": 2,
}

_MATRIX = {
    "type": "array",
    "minItems": 1,
    "items": {"type": "array", "minItems": 1, "items": _PAIR},
    "description": "row-major square matrix of [re, im] pairs",
}

_MATRIX_OBJECT = {
    "type": "object",
    "properties": {"matrix": _MATRIX},
    "required": ["matrix"],
    "additionalProperties": False,
}

_WAITING = {
    "type": "object",
    "description": "waiting-time law between events",
    "properties": {
        "kind": {"enum": list(WAITING_KINDS), "description": " | ".join(WAITING_KINDS)},
        "rate": _positive("exponential: event rate"),
        "weight_a": _positive("biexponential: weight of the fast branch (weights are renormalized)"),
        "rate_a": _positive("biexponential: rate of the fast branch"),
        "weight_b": _positive("biexponential: weight of the slow branch"),
        "rate_b": _positive("biexponential: rate of the slow branch"),
        "alpha": _number("mittag-leffler: exponent in (0, 1]", exclusiveMinimum=0, maximum=1),
        "amplitude": _positive("mittag-leffler: amplitude"),
        "step": _positive("tabulated: sample spacing"),
        "density": {
            "type": "array",
            "items": {"type": "number", "minimum": 0},
            "minItems": 2,
            "description": "tabulated: non-negative density samples from tau = 0",
        },
        "tail_rate": _positive("tabulated: rate of the exponential continuation"),
    },
    "required": ["kind"],
    "allOf": [
        _when(
            "kind",
            kind,
            {
                "properties": {key: True for key in ("kind",) + params},
                "required": list(params),
                "additionalProperties": False,
            },
        )
        for kind, params in WAITING_KINDS.items()
    ],
}

_HAMILTONIAN = {
    "description": '"zero" | {"preset": "rabi", "Omega"} | {"preset": "precession", "omega_A"} | {"matrix"}',
    "anyOf": [
        {"const": "zero"},
        {
            "type": "object",
            "properties": {"preset": {"const": "rabi"}, "Omega": {"type": "number", "minimum": 0}},
            "required": ["preset", "Omega"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"preset": {"const": "precession"}, "omega_A": {"type": "number"}},
            "required": ["preset", "omega_A"],
            "additionalProperties": False,
        },
        _MATRIX_OBJECT,
    ],
}

_CHANNEL = {
    "description": " | ".join(CHANNEL_PRESETS) + ' | {"kraus": [matrix, ...]}',
    "anyOf": [
        {"enum": list(CHANNEL_PRESETS)},
        {
            "type": "object",
            "properties": {"kraus": {"type": "array", "minItems": 1, "items": _MATRIX}},
            "required": ["kraus"],
            "additionalProperties": False,
        },
    ],
}

_STATE = {
    "description": '"maximally-mixed" | {"bloch": [x, y, z]} | {"matrix"}',
    "anyOf": [
        {"const": "maximally-mixed"},
        {
            "type": "object",
            "properties": {
                "bloch": {
                    "type": "array",
                    "items": {"type": "number"},
                    "minItems": 3,
                    "maxItems": 3,
                }
            },
            "required": ["bloch"],
            "additionalProperties": False,
        },
        _MATRIX_OBJECT,
    ],
}

_OBSERVABLE = {
    "anyOf": [
        {"enum": list(OBSERVABLE_PRESETS)},
        {
            "type": "object",
            "properties": {"name": {"type": "string", "minLength": 1}, "matrix": _MATRIX},
            "required": ["name", "matrix"],
            "additionalProperties": False,
        },
    ],
}

_MODEL = {
    "type": "object",
    "description": "event channel, Hamiltonian, initial state and observables",
    "properties": {
        "channel": _CHANNEL,
        "hamiltonian": _HAMILTONIAN,
        "initial_state": _STATE,
        "observables": {
            "type": "array",
            "minItems": 1,
            "items": _OBSERVABLE,
            "description": " | ".join(OBSERVABLE_PRESETS) + ' | {"name", "matrix"}; default ["sz"]',
        },
    },
    "required": ["channel"],
    "additionalProperties": False,
}

_GRID = {
    "type": "object",
    "description": "uniform time grid",
    "properties": {
        "step": _positive("time step"),
        "span": _positive("largest tau, a multiple of grid.step"),
    },
    "required": ["step", "span"],
    "additionalProperties": False,
}

_ENSEMBLE = {
    "type": "object",
    "description": "Monte Carlo ensemble",
    "properties": {
        "N": {"type": "integer", "minimum": 1, "description": "number of realizations"},
        "seed": {"type": "integer", "minimum": 0, "description": "master seed; --seed-override replaces it"},
    },
    "required": ["N", "seed"],
    "additionalProperties": False,
}

_PERTURBATION = {
    "type": "object",
    "description": "perturbed event channel or perturbed event times",
    "properties": {
        "kind": {"enum": ["superoperator", "event-time"], "description": "superoperator (default) | event-time"},
        "lambda": _number("strength; |lambda| max|xi| <= 1 for the superoperator kind"),
        "xi": {"enum": ["cos", "const", "zero"], "description": "drive shape (default cos)"},
        "omega": _number("drive frequency", minimum=0),
        "Omega": _number("Rabi frequency of the driven depolarizing model", minimum=0),
        "s0": _number("initial S_Z of the Monte Carlo rule", minimum=-1, maximum=1),
        "operator": {
            "description": " | ".join(PERTURBATION_OPERATORS) + ' | {"matrix": d^2 x d^2 matrix}',
            "anyOf": [{"enum": list(PERTURBATION_OPERATORS)}, _MATRIX_OBJECT],
        },
        "experimental": {"type": "boolean", "description": "allow the two-term event-time response"},
    },
    "required": ["lambda"],
    "additionalProperties": False,
    "allOf": [
        _when(
            "kind",
            "event-time",
            {"properties": {"operator": {"not": {"const": "depolarizing-bias"}}}},
            {"properties": {"operator": {"not": {"const": "classical-shift"}}}},
        )
    ],
}

_AGES_WITH_INF = {"items": {"anyOf": [{"type": "number", "minimum": 0}, {"const": "inf"}]}}
_AGES_FINITE = {"items": {"type": "number", "minimum": 0}}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "renewal-quantum experiment config",
    "type": "object",
    "properties": {
        "experiment": {"enum": list(EXPERIMENTS), "description": "experiment to run"},
        "output": {"type": "string", "minLength": 1, "description": "CSV path; --out replaces it"},
        "waiting": _WAITING,
        "model": _MODEL,
        "grid": _GRID,
        "ages": {
            "type": "array",
            "minItems": 1,
            "description": 'ages t >= 0 ("inf" allowed for aged-decay)',
        },
        "ensemble": _ENSEMBLE,
        "perturbation": _PERTURBATION,
    },
    "required": ["experiment", "output"],
    "additionalProperties": False,
    "allOf": [
        *(_when("experiment", name, {"required": list(sections)}) for name, sections in REQUIRED_SECTIONS.items()),
        _when("experiment", "aged-decay", {"properties": {"ages": _AGES_WITH_INF}}),
        {
            "if": {
                "properties": {"experiment": {"enum": [e for e in EXPERIMENTS if e != "aged-decay"]}},
                "required": ["experiment"],
            },
            "then": {"properties": {"ages": _AGES_FINITE}},
        },
        _when(
            "experiment",
            "fractional-decay",
            {"properties": {"waiting": {"properties": {"kind": {"const": "mittag-leffler"}}}}},
        ),
        _when(
            "experiment",
            "response-event",
            {"properties": {"perturbation": {"properties": {"kind": {"const": "superoperator"}}}}},
        ),
        _when(
            "experiment",
            "response-time",
            {
                "properties": {
                    "perturbation": {"properties": {"kind": {"const": "event-time"}}, "required": ["kind"]}
                }
            },
        ),
    ],
}

_VALIDATOR = Draft202012Validator(SCHEMA)


def _dotted(parts) -> str:
    path = ""
    for part in parts:
        if isinstance(part, int):
            path += f"[{part}]"
        else:
            path = f"{path}.{part}" if path else str(part)
    return path


def _config_error(error: ValidationError) -> ConfigError:
    """Translate a schema violation into a dotted-path :class:`ConfigError`."""
    parts = list(error.absolute_path)
    message = error.message
    if error.validator == "additionalProperties":
        allowed = error.schema.get("properties", {})
        parts.append(sorted(key for key in error.instance if key not in allowed)[0])
        message = "unknown key"
    elif error.validator == "required":
        parts.append(next(key for key in error.validator_value if key not in error.instance))
        message = "missing required key"
    return ConfigError(_dotted(parts), message)


def validate_document(document: Any) -> None:
    """Check a decoded JSON document against :data:`SCHEMA`.

    Raises:
        ConfigError: For the most relevant violation, naming its dotted path.
    """
    error = best_match(_VALIDATOR.iter_errors(document))
    if error is not None:
        raise _config_error(error)


# ---------------------------------------------------------------------------
# Sections
# ---------------------------------------------------------------------------


def _matrix(value, path: str) -> np.ndarray:
    try:
        return matrix_from_pairs(value)
    except (StructuralError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from None


@dataclass(frozen=True)
class WaitingSpec:
    kind: str
    params: dict

    def build(self) -> WaitingTime:
        p = self.params
        if self.kind == "exponential":
            return Exponential(p["rate"])
        if self.kind == "biexponential":
            return BiExponential(p["weight_a"], p["rate_a"], p["weight_b"], p["rate_b"])
        if self.kind == "mittag-leffler":
            return MittagLeffler(p["alpha"], p["amplitude"])
        samples = np.asarray(p["density"], dtype=float)
        grid = TimeGrid(p["step"], samples.size)
        try:
            return Tabulated(GridFunction(grid, samples), p["tail_rate"])
        except ValueError as exc:
            raise ConfigError("waiting.density", str(exc)) from None


def _parse_waiting(node: dict) -> WaitingSpec:
    kind = node["kind"]
    params: dict[str, Any] = {key: float(node[key]) for key in WAITING_KINDS[kind] if key != "density"}
    if kind == "tabulated":
        params["density"] = [float(v) for v in node["density"]]
    return WaitingSpec(kind, params)


@dataclass(frozen=True)
class ModelSpec:
    """Qubit-or-larger model: channel, Hamiltonian, initial state and observables."""

    channel: KrausChannel
    hamiltonian: Hamiltonian
    initial_state: DensityMatrix
    observables: dict = field(default_factory=dict)

    def build(self, waiting: WaitingTime) -> Model:
        return Model(self.hamiltonian, self.channel, waiting)


def _parse_channel(value, path: str) -> KrausChannel:
    if isinstance(value, str):
        return CHANNEL_PRESETS[value]()
    where = f"{path}.kraus"
    try:
        channel = KrausChannel(tuple(_matrix(op, f"{where}[{i}]") for i, op in enumerate(value["kraus"])))
    except StructuralError as exc:
        raise ConfigError(where, str(exc)) from None
    if channel.completeness_deviation > 1e-10:
        raise ConfigError(where, f"operators are not complete (deviation {channel.completeness_deviation:.3e})")
    return channel


def _parse_hamiltonian(value, path: str, dim: int) -> Hamiltonian:
    if value is None or value == "zero":
        return Hamiltonian.zero(dim)
    try:
        if "matrix" in value:
            h = Hamiltonian(_matrix(value["matrix"], f"{path}.matrix"))
        elif value["preset"] == "rabi":
            h = rabi_hamiltonian(float(value["Omega"]))
        else:
            h = precession_hamiltonian(float(value["omega_A"]))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None
    if h.dim != dim:
        raise ConfigError(path, f"dimension {h.dim} does not match the channel dimension {dim}")
    return h


def _parse_state(value, path: str, dim: int) -> DensityMatrix:
    if value is None or value == "maximally-mixed":
        return DensityMatrix.maximally_mixed(dim)
    if "bloch" in value and dim != 2:
        raise ConfigError(f"{path}.bloch", f"Bloch coordinates describe a qubit, the channel dimension is {dim}")
    try:
        if "bloch" in value:
            state = DensityMatrix.from_bloch(*(float(c) for c in value["bloch"]))
        else:
            state = DensityMatrix(_matrix(value["matrix"], f"{path}.matrix"))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None
    if state.dim != dim:
        raise ConfigError(path, f"dimension {state.dim} does not match the channel dimension {dim}")
    return state


def _parse_observables(value, path: str, dim: int) -> dict:
    out = {}
    for i, item in enumerate(value or ["sz"]):
        where = f"{path}[{i}]"
        if isinstance(item, str):
            name, matrix = item, pauli(item)
        else:
            name, matrix = item["name"], _matrix(item["matrix"], f"{where}.matrix")
        try:
            obs = Observable(matrix)
        except ValueError as exc:
            raise ConfigError(where, str(exc)) from None
        if obs.dim != dim:
            raise ConfigError(where, f"dimension {obs.dim} does not match the channel dimension {dim}")
        # repeated names stay distinct; regression reads the first two in order
        out[name if name not in out else f"{name}#{i}"] = obs
    return out


def _parse_model(node: dict) -> ModelSpec:
    path = "model"
    channel = _parse_channel(node["channel"], f"{path}.channel")
    dim = channel.dim
    return ModelSpec(
        channel,
        _parse_hamiltonian(node.get("hamiltonian"), f"{path}.hamiltonian", dim),
        _parse_state(node.get("initial_state"), f"{path}.initial_state", dim),
        _parse_observables(node.get("observables"), f"{path}.observables", dim),
    )


@dataclass(frozen=True)
class GridSpec:
    step: float
    span: float

    def build(self) -> TimeGrid:
        return TimeGrid.spanning(self.span, self.step)


def _parse_grid(node: dict) -> GridSpec:
    spec = GridSpec(float(node["step"]), float(node["span"]))
    try:
        spec.build()
    except (OffGridError, ValueError) as exc:
        raise ConfigError("grid.span", str(exc)) from None
    return spec


def _parse_ages(value) -> tuple:
    return tuple(math.inf if item == "inf" else float(item) for item in value)


@dataclass(frozen=True)
class EnsembleSpec:
    realizations: int
    seed: int


def _parse_ensemble(node: dict) -> EnsembleSpec:
    # JSON Schema integers include 10.0
    return EnsembleSpec(int(node["N"]), int(node["seed"]))


@dataclass(frozen=True)
class PerturbationSpec:
    kind: str
    lam: float
    xi: str
    omega: float
    Omega: float = 0.0
    s0: float = 0.0
    operator: Any = "depolarizing-bias"
    experimental: bool = False

    @property
    def drive(self) -> Drive:
        return drive(self.xi, self.omega)

    def build(self) -> EventPerturbation:
        if isinstance(self.operator, str):
            _, factory = PERTURBATION_OPERATORS[self.operator]
            return factory(self.lam, self.drive)
        return EventPerturbation(self.kind, self.lam, self.drive, self.operator)


def _parse_perturbation(node: dict) -> PerturbationSpec:
    path = "perturbation"
    kind = node.get("kind", "superoperator")
    operator = node.get("operator", "depolarizing-bias" if kind == "superoperator" else "classical-shift")
    if isinstance(operator, dict):
        operator = _matrix(operator["matrix"], f"{path}.operator.matrix")
    spec = PerturbationSpec(
        kind=kind,
        lam=float(node["lambda"]),
        xi=node.get("xi", "cos"),
        omega=float(node.get("omega", 0.0)),
        Omega=float(node.get("Omega", 0.0)),
        s0=float(node.get("s0", 0.0)),
        operator=operator,
        experimental=node.get("experimental", False),
    )
    try:
        spec.build()
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None
    return spec


# ---------------------------------------------------------------------------
# Document
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    output: str
    raw: dict
    waiting: WaitingSpec | None = None
    model: ModelSpec | None = None
    grid: GridSpec | None = None
    ages: tuple = ()
    ensemble: EnsembleSpec | None = None
    perturbation: PerturbationSpec | None = None

    @property
    def seed(self) -> int | None:
        return None if self.ensemble is None else self.ensemble.seed

    def canonical_json(self) -> str:
        """Key-sorted compact JSON of the effective document."""
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"))


def parse_config(document: Any) -> ExperimentConfig:
    """Validate a decoded JSON document and build its sections.

    Raises:
        ConfigError: On the first schema or semantic violation, naming its dotted path.
    """
    validate_document(document)
    experiment = document["experiment"]

    fields: dict[str, Any] = {}
    if "waiting" in document:
        fields["waiting"] = _parse_waiting(document["waiting"])
    if "model" in document:
        fields["model"] = _parse_model(document["model"])
    if "grid" in document:
        fields["grid"] = _parse_grid(document["grid"])
    if "ages" in document:
        fields["ages"] = _parse_ages(document["ages"])
    if "ensemble" in document:
        fields["ensemble"] = _parse_ensemble(document["ensemble"])
    if "perturbation" in document:
        fields["perturbation"] = _parse_perturbation(document["perturbation"])

    if experiment == "regression" and len(fields["model"].observables) < 2:
        raise ConfigError("model.observables", "regression needs two observables (O, then A)")
    if "waiting" in fields:
        try:
            fields["waiting"].build()
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError("waiting", str(exc)) from None
    return ExperimentConfig(experiment=experiment, output=document["output"], raw=document, **fields)


def _finite(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ConfigError("", f"number {text} overflows a double")
    return value


def _reject_constant(name: str):
    raise ConfigError("", f"{name} is not valid JSON")


def load_config(
    path: str | Path,
    seed_override: int | None = None,
    out_override: str | None = None,
) -> ExperimentConfig:
    """Read and validate a config file, then apply CLI overrides.

    Raises:
        OSError: If the file cannot be read.
        ConfigError: On invalid JSON or a schema violation.
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        document = json.loads(text, parse_float=_finite, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if isinstance(document, dict):
        document = dict(document)
        if seed_override is not None:
            if seed_override < 0:
                raise ConfigError("ensemble.seed", f"must be >= 0, got {seed_override}")
            if isinstance(document.get("ensemble"), dict):
                document["ensemble"] = {**document["ensemble"], "seed": seed_override}
        if out_override is not None:
            document["output"] = str(out_override)
    return parse_config(document)
