"""Experiment registry and runners.

Each runner takes a validated :class:`ExperimentConfig` and returns an
:class:`ExperimentOutcome` whose frame is written as the experiment CSV.

Usage:
    renewal-quantum run configs/biexp-aging.json
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import pandas as pd

from renewal_quantum.core.numerics import TimeGrid
from renewal_quantum.core.qops import Observable, depolarizing_channel, pauli, rabi_hamiltonian
from renewal_quantum.core.renewal import (
    AgedRenewalTables,
    BiExponential,
    MittagLeffler,
    aged_survival_asymptotic,
    aged_survival_series,
    biexp_aged_survival,
)
from renewal_quantum.core.response import (
    envelope_constant,
    envelope_ratios,
    event_time_kernel_integral,
    fit_envelope_exponent,
    resonant_residual,
    response_event_time,
    response_kernel_event,
    simulate_perturbed_depolarizing,
    sz_exact_depolarizing,
)
from renewal_quantum.core.trajectories import Model, dephasing_coherence_curve, regression_check
from renewal_quantum.pipeline.config import ExperimentConfig
from renewal_quantum.pipeline.validation import run_validation_suite, statistical_gate

log = logging.getLogger(__name__)

# Largest series argument A (tau + t)**alpha tabulated by fractional-decay.
SERIES_COLUMN_LIMIT = 3.0
# tau / t above which the asymptotic column is compared.
ASYMPTOTIC_RATIO = 10.0


@dataclass(frozen=True)
class ExperimentInfo:
    name: str
    description: str
    reproduces: str
    configs: tuple


@dataclass
class ExperimentOutcome:
    """CSV frame plus what the CLI reports.

    ``passed`` is ``None`` for experiments without a pass/fail verdict.
    """

    frame: pd.DataFrame
    passed: bool | None = None
    summary: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)


def age_label(age: float) -> str:
    return "inf" if math.isinf(age) else f"{age:g}"


def _step(i: int, n: int, message: str, *args) -> None:
    log.info("[%d/%d] " + message, i, n, *args)


# ---------------------------------------------------------------------------
# Aging
# ---------------------------------------------------------------------------


def run_aged_decay(config: ExperimentConfig, threads: int | None = None) -> ExperimentOutcome:
    """Aged survival ``P0~(tau, t)`` per configured age, ``inf`` for the stationary curve."""
    w = config.waiting.build()
    grid = config.grid.build()
    finite = [t for t in config.ages if math.isfinite(t)]
    _step(1, 2, "tabulating aged renewal statistics up to age %g", max(finite, default=0.0))
    tables = AgedRenewalTables(w, grid, max(finite, default=0.0))

    _step(2, 2, "evaluating %d aged survival curves", len(config.ages))
    data = {"tau": grid.values}
    summary = {}
    worst = 0.0
    for age in config.ages:
        if math.isinf(age):
            curve = dephasing_coherence_curve(w, age, grid)
        else:
            curve = np.array(tables.at_age(age).survival.samples)
            if isinstance(w, BiExponential):
                worst = max(worst, float(np.max(np.abs(curve - biexp_aged_survival(w, grid.values, age)))))
        data[f"Ptilde[t={age_label(age)}]"] = curve
    if isinstance(w, BiExponential) and finite:
        summary["closed-form deviation"] = worst
    return ExperimentOutcome(pd.DataFrame(data), summary=summary)


def _series_column(w: MittagLeffler, grid: TimeGrid, age: float) -> np.ndarray:
    out = np.full(grid.count, np.nan)
    z = w.amplitude * (grid.values + age) ** w.alpha
    for k in np.flatnonzero(z <= SERIES_COLUMN_LIMIT):
        out[k] = aged_survival_series(w.alpha, w.amplitude, float(grid.values[k]), age)
    return out


def _asymptotic_column(w: MittagLeffler, grid: TimeGrid, age: float) -> np.ndarray:
    out = np.full(grid.count, np.nan)
    if w.alpha >= 1.0:
        return out
    valid = grid.values + age > 0
    out[valid] = aged_survival_asymptotic(w.alpha, w.amplitude, grid.values[valid], age)
    return out


def run_fractional_decay(config: ExperimentConfig, threads: int | None = None) -> ExperimentOutcome:
    """Convolution, series and asymptotic routes to the fractional aged survival."""
    w = config.waiting.build()
    grid = config.grid.build()
    _step(1, 3, "tabulating aged renewal statistics up to age %g", max(config.ages))
    tables = AgedRenewalTables(w, grid, max(config.ages))

    _step(2, 3, "series route where A(tau+t)^alpha <= %g", SERIES_COLUMN_LIMIT)
    data = {"tau": grid.values}
    series_gap = 0.0
    asymptotic_gap = np.nan
    for age in config.ages:
        label = age_label(age)
        conv = np.array(tables.at_age(age).survival.samples)
        series = _series_column(w, grid, age)
        data[f"Ptilde[t={label}]"] = conv
        data[f"series[t={label}]"] = series
        if np.any(np.isfinite(series)):
            series_gap = max(series_gap, float(np.nanmax(np.abs(conv - series))))

    _step(3, 3, "asymptotic route")
    for age in config.ages:
        label = age_label(age)
        asym = _asymptotic_column(w, grid, age)
        data[f"asymptotic[t={label}]"] = asym
        if age > 0 and w.alpha < 1.0:
            far = grid.values >= ASYMPTOTIC_RATIO * age - 1e-9
            if np.any(far):
                conv = data[f"Ptilde[t={label}]"]
                rel = float(np.max(np.abs(conv[far] - asym[far]) / asym[far]))
                asymptotic_gap = rel if np.isnan(asymptotic_gap) else max(asymptotic_gap, rel)

    summary = {"series max deviation": series_gap, "asymptotic max relative deviation": asymptotic_gap}
    return ExperimentOutcome(pd.DataFrame(data), summary=summary)


# ---------------------------------------------------------------------------
# Regression
# ---------------------------------------------------------------------------


def run_regression(config: ExperimentConfig, threads: int | None = None) -> ExperimentOutcome:
    """Correlation decay vs expectation decay after preparation, per age."""
    w = config.waiting.build()
    model = config.model.build(w)
    grid = config.grid.build()
    first, second = list(config.model.observables.values())[:2]
    frames, checks = [], []
    for i, age in enumerate(config.ages, 1):
        _step(i, len(config.ages), "regression at age %g (%d realizations)", age, config.ensemble.realizations)
        result = regression_check(
            model,
            config.model.initial_state,
            first,
            second,
            age,
            grid,
            config.ensemble.realizations,
            config.ensemble.seed,
            threads,
        )
        frames.append(result.pop("curves"))
        checks.append({"check": f"regression[t={age_label(age)}]", **result})
    passed = all(row["pass"] for row in checks)
    return ExperimentOutcome(pd.concat(frames, ignore_index=True), passed=passed, checks=checks)


# ---------------------------------------------------------------------------
# Linear response
# ---------------------------------------------------------------------------


def _envelope_window(Omega: float, omega: float, span: float) -> float:
    if omega > 0:
        return 2 * np.pi / omega
    if Omega > 0:
        return 2 * np.pi / Omega
    return span / 10


def run_response_event(config: ExperimentConfig, threads: int | None = None) -> ExperimentOutcome:
    """Driven biased-depolarizing response: quadrature, Monte Carlo and envelope."""
    w = config.waiting.build()
    grid = config.grid.build()
    pert = config.perturbation
    tau = grid.values
    survival = np.clip(np.asarray(w.survival(tau), dtype=float), 0.0, 1.0)

    _step(1, 4, "quadrature S_Z (Omega=%g, omega=%g, lambda=%g)", pert.Omega, pert.omega, pert.lam)
    exact = sz_exact_depolarizing(w, pert.Omega, pert.omega, pert.lam, grid, drive_kind=pert.xi)
    exact = exact + pert.s0 * survival * np.cos(pert.Omega * tau)

    _step(2, 4, "response kernel route")
    model = Model(rabi_hamiltonian(pert.Omega), depolarizing_channel(), w)
    kernel = response_kernel_event(model, pert.build(), Observable(pauli("sz")), grid)
    kernel_route = kernel.expectation() + pert.s0 * survival * np.cos(pert.Omega * tau)

    _step(3, 4, "Monte Carlo S_Z (%d realizations)", config.ensemble.realizations)
    run = simulate_perturbed_depolarizing(
        w,
        pert.Omega,
        pert.omega,
        pert.lam,
        grid,
        config.ensemble.realizations,
        config.ensemble.seed,
        s0=pert.s0,
        threads=threads,
        drive_kind=pert.xi,
    )
    gate = statistical_gate(run.curve("sz"), run.error("sz"), exact)

    _step(4, 4, "envelope analysis")
    window = _envelope_window(pert.Omega, pert.omega, grid.span)
    start, stop = grid.span / 4, grid.span
    try:
        exponent = fit_envelope_exponent(grid, exact, start, stop, window)
        constant = envelope_constant(grid, exact, survival, start, stop, window)
        ratios = envelope_ratios(grid, exact, survival, start, stop, window)
        band = float(np.max(ratios) / np.median(ratios))
    except ValueError as exc:
        log.warning("envelope analysis skipped: %s", exc)
        exponent = constant = band = np.nan

    data = {
        "tau": tau,
        "sz_exact": exact,
        "sz_mc": run.curve("sz"),
        "stderr": run.error("sz"),
        "envelope": constant * survival,
    }
    summary = {
        "kernel route deviation": float(np.max(np.abs(kernel_route - exact))),
        "points within 2 stderr": gate["value"],
        "envelope exponent": exponent,
        "envelope constant": constant,
        "envelope band": band,
    }
    if pert.omega > 0 and math.isclose(pert.Omega, pert.omega):
        data["residual"] = resonant_residual(w, pert.omega, pert.lam, grid, exact)
        tail = tau >= grid.span - window
        summary["terminal amplitude"] = float(np.max(np.abs(exact[tail])))
        summary["lambda (1 - P0) / 2"] = pert.lam * (1.0 - survival[-1]) / 2
    return ExperimentOutcome(pd.DataFrame(data), summary=summary, checks=[{"check": "monte-carlo", **gate}])


def run_response_time(config: ExperimentConfig, threads: int | None = None) -> ExperimentOutcome:
    """First-order response to perturbed event times."""
    w = config.waiting.build()
    model = config.model.build(w)
    grid = config.grid.build()
    pert = config.perturbation
    name, observable = next(iter(config.model.observables.items()))

    _step(1, 2, "event-time kernel integral")
    integral = event_time_kernel_integral(w, pert.drive, grid)
    _step(2, 2, "response of %s (lambda=%g)", name, pert.lam)
    response = response_event_time(w, pert.build(), model, observable, grid, experimental=pert.experimental)
    frame = pd.DataFrame({"tau": grid.values, "response": response, "kernel_integral": integral})
    return ExperimentOutcome(frame, summary={"observable": name, "final response": float(response[-1])})


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def run_validate(config: ExperimentConfig, threads: int | None = None) -> ExperimentOutcome:
    rows = run_validation_suite(config.ensemble.realizations, config.ensemble.seed, threads)
    frame = pd.DataFrame(rows, columns=["check", "pass", "value", "threshold", "reason"])
    return ExperimentOutcome(frame, passed=all(row["pass"] for row in rows), checks=rows)


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

REGISTRY: dict[str, tuple[ExperimentInfo, Callable[..., ExperimentOutcome]]] = {
    "aged-decay": (
        ExperimentInfo(
            "aged-decay",
            "Coherence decay P0~(tau, t) after preparation at several ages",
            "bi-exponential aging curves",
            ("biexp-aging.json", "biexp-aging-skewed.json"),
        ),
        run_aged_decay,
    ),
    "fractional-decay": (
        ExperimentInfo(
            "fractional-decay",
            "Fractional aged survival by convolution, series and asymptotic routes",
            "Mittag-Leffler aging curves",
            ("fractional-aging.json",),
        ),
        run_fractional_decay,
    ),
    "regression": (
        ExperimentInfo(
            "regression",
            "Two-time correlation decay vs prepared expectation decay",
            "quantum regression check",
            ("regression.json",),
        ),
        run_regression,
    ),
    "response-event": (
        ExperimentInfo(
            "response-event",
            "Driven response to a perturbed event superoperator",
            "S_Z response with +-P0 envelope",
            ("response-detuned.json", "response-resonant.json"),
        ),
        run_response_event,
    ),
    "response-time": (
        ExperimentInfo(
            "response-time",
            "First-order response to perturbed event times",
            "event-time response",
            ("response-event-time.json",),
        ),
        run_response_time,
    ),
    "validate": (
        ExperimentInfo(
            "validate",
            "Invariant and cross-route suite with pass/fail table",
            "acceptance checks",
            ("validate.json",),
        ),
        run_validate,
    ),
}


def list_experiments() -> list[dict]:
    return [
        {"name": info.name, "description": info.description, "reproduces": info.reproduces, "configs": list(info.configs)}
        for info, _ in REGISTRY.values()
    ]


def run_experiment(config: ExperimentConfig, threads: int | None = None) -> ExperimentOutcome:
    """Dispatch ``config`` to its runner.

    Raises:
        NumericalGuardError: When a numerical guard trips inside the runner.
    """
    _, runner = REGISTRY[config.experiment]
    log.info("running %s", config.experiment)
    return runner(config, threads)
