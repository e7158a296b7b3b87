"""Tests for the invariant suite."""

import io

import numpy as np
import pytest
from rich.console import Console
from rich.progress import Progress

from renewal_quantum.core.trajectories import ensemble_progress
from renewal_quantum.pipeline import validation
from renewal_quantum.pipeline.validation import (
    DETERMINISTIC_CHECKS,
    MONTE_CARLO_CHECKS,
    _merge,
    run_validation_suite,
    statistical_gate,
)


class TestStatisticalGate:
    def test_exact_match_passes(self):
        reference = np.linspace(0.0, 1.0, 50)
        result = statistical_gate(reference, np.full(50, 0.01), reference)
        assert result["pass"] is True
        assert result["value"] == 1.0

    def test_outlier_fails(self):
        estimate = np.zeros(100)
        estimate[10] = 0.5
        result = statistical_gate(estimate, np.full(100, 0.1), np.zeros(100))
        assert result["pass"] is False
        assert "beyond" in result["reason"]

    def test_too_many_points_outside_two_sigma(self):
        estimate = np.full(100, 0.3)
        result = statistical_gate(estimate, np.full(100, 0.1), np.zeros(100))
        assert result["pass"] is False
        assert result["value"] == 0.0

    def test_zero_error_points(self):
        result = statistical_gate([1.0, 2.0], [0.0, 0.0], [1.0, 2.0])
        assert result["pass"] is True


class TestMerge:
    def test_reports_first_failure(self):
        rows = [
            {"pass": True, "value": 0.99, "threshold": 0.95, "reason": "fine"},
            {"pass": False, "value": 0.5, "threshold": 0.95, "reason": "broken"},
        ]
        merged = _merge(rows)
        assert merged["pass"] is False
        assert merged["reason"] == "broken"
        assert merged["value"] == 0.5

    def test_all_passing(self):
        rows = [{"pass": True, "value": v, "threshold": 0.95, "reason": str(v)} for v in (0.97, 0.99)]
        merged = _merge(rows)
        assert merged["pass"] is True
        assert merged["value"] == 0.97


class TestDeterministicChecks:
    @pytest.mark.parametrize("name", list(DETERMINISTIC_CHECKS))
    def test_check_passes(self, name):
        result = DETERMINISTIC_CHECKS[name]()
        assert set(result) == {"pass", "value", "threshold", "reason"}
        assert result["pass"] is True, result["reason"]


class TestMonteCarloChecks:
    def test_check_shapes(self):
        result = MONTE_CARLO_CHECKS["stationary-ensemble"](200, 3)
        assert set(result) == {"pass", "value", "threshold", "reason"}
        assert isinstance(result["pass"], bool)

    def test_dephasing_gates_sign_flip_channel(self, monkeypatch):
        calls = []

        def flat_parity(w, age, grid):
            calls.append(age)
            return np.zeros(grid.count)

        monkeypatch.setattr(validation, "parity_decay", flat_parity)
        result = validation.check_dephasing_monte_carlo(200, 3)
        assert calls == [0.0, 10.0]
        assert result["pass"] is False


class TestResonantCheck:
    def test_tolerance_is_relative(self):
        result = validation.check_response_resonant()
        assert result["pass"] is True, result["reason"]
        assert result["threshold"] == validation.RESONANT_RTOL
        assert 0.0 <= result["value"] <= validation.RESONANT_RTOL

    def test_scaled_amplitude_fails(self, monkeypatch):
        exact = validation.sz_exact_depolarizing
        monkeypatch.setattr(validation, "sz_exact_depolarizing", lambda *args, **kwargs: 1.2 * exact(*args, **kwargs))
        result = validation.check_response_resonant()
        assert result["pass"] is False
        assert result["value"] > validation.RESONANT_RTOL


class TestSuite:
    def test_rows_in_order(self, monkeypatch):
        fake = {"pass": True, "value": 1.0, "threshold": 1.0, "reason": "ok"}
        calls = []

        def deterministic():
            calls.append("d")
            return dict(fake)

        def monte_carlo(realizations, seed, threads=None):
            calls.append((realizations, seed))
            return dict(fake)

        monkeypatch.setattr(validation, "DETERMINISTIC_CHECKS", {"a": deterministic, "b": deterministic})
        monkeypatch.setattr(validation, "MONTE_CARLO_CHECKS", {"c": monte_carlo})
        rows = run_validation_suite(10, 4)
        assert [row["check"] for row in rows] == ["a", "b", "c"]
        assert calls == ["d", "d", (10, 4)]

    def test_spinner_per_check(self, monkeypatch):
        fake = {"pass": True, "value": 1.0, "threshold": 1.0, "reason": "ok"}
        monkeypatch.setattr(validation, "DETERMINISTIC_CHECKS", {"a": lambda: dict(fake)})
        monkeypatch.setattr(validation, "MONTE_CARLO_CHECKS", {"c": lambda realizations, seed, threads=None: dict(fake)})
        progress = Progress(console=Console(file=io.StringIO()), auto_refresh=False)
        with ensemble_progress(progress):
            run_validation_suite(10, 4)
        assert [task.description for task in progress.tasks] == ["[1/2] a", "[2/2] c"]
        assert all(task.finished and not task.visible for task in progress.tasks)
