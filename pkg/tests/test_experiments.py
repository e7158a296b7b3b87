"""Tests for the experiment runners."""

import math
from pathlib import Path

import numpy as np
import pytest

from renewal_quantum.pipeline import experiments
from renewal_quantum.pipeline.config import EXPERIMENTS, parse_config
from renewal_quantum.pipeline.experiments import (
    REGISTRY,
    age_label,
    list_experiments,
    run_experiment,
)

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
BIEXP_WAITING = {"kind": "biexponential", "weight_a": 0.8, "rate_a": 1.0, "weight_b": 0.2, "rate_b": 0.05}


def response_document(Omega: float) -> dict:
    return {
        "experiment": "response-event",
        "output": "out.csv",
        "waiting": {"kind": "mittag-leffler", "alpha": 0.5, "amplitude": 0.5},
        "grid": {"step": 0.05, "span": 20.0},
        "perturbation": {"kind": "superoperator", "lambda": 0.1, "xi": "cos", "omega": 1.0, "Omega": Omega},
        "ensemble": {"N": 200, "seed": 7},
    }


class TestRegistry:
    def test_every_experiment_registered(self):
        assert set(REGISTRY) == set(EXPERIMENTS)

    def test_listing(self):
        listing = list_experiments()
        assert len(listing) == 6
        assert all(set(item) == {"name", "description", "reproduces", "configs"} for item in listing)

    @pytest.mark.parametrize("name", list(EXPERIMENTS))
    def test_bundled_configs_exist(self, name):
        info, _ = REGISTRY[name]
        for config_name in info.configs:
            assert (CONFIG_DIR / config_name).exists()

    def test_age_label(self):
        assert age_label(math.inf) == "inf"
        assert age_label(2.0) == "2"
        assert age_label(0.5) == "0.5"


class TestAgedDecay:
    def test_columns_and_closed_form(self):
        config = parse_config(
            {
                "experiment": "aged-decay",
                "output": "out.csv",
                "waiting": BIEXP_WAITING,
                "grid": {"step": 0.01, "span": 10.0},
                "ages": [0, 2, "inf"],
            }
        )
        outcome = run_experiment(config)
        assert list(outcome.frame.columns) == ["tau", "Ptilde[t=0]", "Ptilde[t=2]", "Ptilde[t=inf]"]
        assert outcome.passed is None
        assert outcome.summary["closed-form deviation"] < 1e-6
        assert outcome.frame["Ptilde[t=0]"].iloc[0] == 1.0


class TestFractionalDecay:
    def test_routes(self):
        config = parse_config(
            {
                "experiment": "fractional-decay",
                "output": "out.csv",
                "waiting": {"kind": "mittag-leffler", "alpha": 0.5, "amplitude": 1.0},
                "grid": {"step": 0.01, "span": 20.0},
                "ages": [0, 1],
            }
        )
        outcome = run_experiment(config)
        frame = outcome.frame
        assert "series[t=1]" in frame.columns
        assert "asymptotic[t=1]" in frame.columns
        # series column is only filled where its argument is small
        assert np.isnan(frame["series[t=1]"].iloc[-1])
        assert outcome.summary["series max deviation"] < 1e-2
        assert outcome.summary["asymptotic max relative deviation"] < 0.1


class TestRegression:
    def test_checks_per_age(self):
        config = parse_config(
            {
                "experiment": "regression",
                "output": "out.csv",
                "waiting": BIEXP_WAITING,
                "model": {"channel": "dephasing", "initial_state": {"bloch": [1, 0, 0]}, "observables": ["sx", "sx"]},
                "grid": {"step": 0.1, "span": 2.0},
                "ages": [0, 1],
                "ensemble": {"N": 200, "seed": 5},
            }
        )
        outcome = run_experiment(config)
        assert [row["check"] for row in outcome.checks] == ["regression[t=0]", "regression[t=1]"]
        assert len(outcome.frame) == 2 * 21
        assert outcome.passed == all(row["pass"] for row in outcome.checks)


class TestResponseEvent:
    def test_detuned(self):
        outcome = run_experiment(parse_config(response_document(3.0)))
        assert list(outcome.frame.columns) == ["tau", "sz_exact", "sz_mc", "stderr", "envelope"]
        assert outcome.summary["kernel route deviation"] < 1e-4
        assert outcome.checks[0]["check"] == "monte-carlo"

    def test_resonant_adds_residual(self):
        outcome = run_experiment(parse_config(response_document(1.0)))
        assert "residual" in outcome.frame.columns
        assert "terminal amplitude" in outcome.summary


class TestResponseTime:
    def test_classical_shift(self):
        config = parse_config(
            {
                "experiment": "response-time",
                "output": "out.csv",
                "waiting": BIEXP_WAITING,
                "model": {"channel": "depolarizing", "observables": ["sz"]},
                "grid": {"step": 0.01, "span": 10.0},
                "perturbation": {"kind": "event-time", "lambda": 0.05, "xi": "cos", "omega": 1.0},
            }
        )
        outcome = run_experiment(config)
        frame = outcome.frame
        assert list(frame.columns) == ["tau", "response", "kernel_integral"]
        np.testing.assert_allclose(frame["response"], 0.05 * frame["kernel_integral"], atol=1e-9)
        assert outcome.summary["observable"] == "sz"


class TestValidate:
    def test_frame(self, monkeypatch):
        rows = [
            {"check": "a", "pass": True, "value": 1.0, "threshold": 1.0, "reason": "ok"},
            {"check": "b", "pass": False, "value": 0.0, "threshold": 1.0, "reason": "bad"},
        ]
        monkeypatch.setattr(experiments, "run_validation_suite", lambda n, seed, threads: rows)
        config = parse_config({"experiment": "validate", "output": "out.csv", "ensemble": {"N": 10, "seed": 1}})
        outcome = run_experiment(config)
        assert list(outcome.frame.columns) == ["check", "pass", "value", "threshold", "reason"]
        assert outcome.passed is False
        assert outcome.checks == rows
