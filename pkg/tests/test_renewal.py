"""Tests for waiting times and aged renewal statistics."""

import math

import numpy as np
import pytest
from scipy import stats

from renewal_quantum.core.errors import NumericalGuardError, OffGridError, RenormalizationWarning
from renewal_quantum.core.numerics import GridFunction, TimeGrid, exp_erfc, integrate_grid
from renewal_quantum.core.renewal import (
    AgedRenewalTables,
    BiExponential,
    Exponential,
    MittagLeffler,
    Tabulated,
    aged_kernel_laplace,
    aged_sprinkling,
    aged_survival,
    aged_survival_asymptotic,
    aged_survival_series,
    aged_waiting,
    biexp_aged_survival,
    biexp_asymptotic_weights,
    biexp_sprinkling,
    event_count_probs,
    event_count_table,
    kernel_laplace,
    laplace_waiting,
    mean_waiting_time,
    sample_interval,
    sprinkling_age_derivative,
    sprinkling_correction,
    sprinkling_from_aged_waiting,
    survival,
    two_time_event_probs,
    two_time_event_table,
)

BIEXP = BiExponential(0.8, 1.0, 0.2, 0.05)
FRACTIONAL = MittagLeffler(0.5, 1.0)


class TestWaitingTimes:
    def test_exponential_survival(self):
        assert survival(Exponential(1.0), 1.0) == pytest.approx(math.exp(-1.0))

    def test_mittag_leffler_survival(self):
        assert survival(MittagLeffler(0.5, 0.5), 4.0) == pytest.approx(0.427584, abs=1e-6)

    def test_biexponential_survival_at_origin(self):
        assert survival(BIEXP, 0.0) == 1.0

    def test_negative_tau_rejected(self):
        with pytest.raises(ValueError):
            survival(BIEXP, -1.0)

    def test_exponential_kernel(self):
        assert kernel_laplace(Exponential(1.0), 3.0) == pytest.approx(1.0)

    def test_fractional_kernel(self):
        assert kernel_laplace(FRACTIONAL, 4.0) == pytest.approx(2.0)

    def test_biexponential_laplace(self):
        assert laplace_waiting(BIEXP, 1.0) == pytest.approx(0.409524, abs=1e-6)

    def test_biexponential_kernel(self):
        assert kernel_laplace(BIEXP, 1.0) == pytest.approx(0.693548, abs=1e-6)

    def test_kernel_identity(self):
        for w in (Exponential(2.0), BIEXP, FRACTIONAL):
            for u in (0.5, 1.0, 2.0):
                wu = laplace_waiting(w, u)
                assert kernel_laplace(w, u) * (1.0 - wu) / u == pytest.approx(wu, rel=1e-12)

    def test_means(self):
        assert mean_waiting_time(BIEXP) == pytest.approx(4.8)
        assert mean_waiting_time(FRACTIONAL) == math.inf

    def test_renormalization_warning(self):
        with pytest.warns(RenormalizationWarning):
            w = BiExponential(0.4, 1.0, 0.1, 0.05)
        assert w.weight_a == pytest.approx(0.8)
        assert w.weight_b == pytest.approx(0.2)

    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            Exponential(0.0)
        with pytest.raises(ValueError):
            MittagLeffler(1.5, 1.0)
        with pytest.raises(ValueError):
            BiExponential(-0.1, 1.0, 1.1, 1.0)

    def test_fractional_sprinkling_is_singular(self):
        f = FRACTIONAL.sprinkling(TimeGrid.spanning(1.0, 0.1))
        assert f.singular_exponent == pytest.approx(-0.5)
        assert f.samples[4] == pytest.approx(0.4**-0.5 / math.sqrt(math.pi))


class TestSampling:
    def test_exponential_mean(self):
        draws = sample_interval(Exponential(1.0), np.random.default_rng(1), 100_000)
        assert abs(draws.mean() - 1.0) < 4 / math.sqrt(100_000)

    @pytest.mark.parametrize("w, tau", [(FRACTIONAL, 1.0), (BIEXP, 5.0), (MittagLeffler(0.7, 0.5), 2.0)])
    def test_empirical_survival(self, w, tau):
        n = 100_000
        draws = sample_interval(w, np.random.default_rng(2), n)
        p = survival(w, tau)
        assert abs(np.mean(draws > tau) - p) < 4 * math.sqrt(p * (1 - p) / n)

    @pytest.mark.parametrize("w", [Exponential(1.0), BIEXP, FRACTIONAL], ids=["exp", "biexp", "ml"])
    def test_kolmogorov_smirnov(self, w):
        n = 20_000
        draws = sample_interval(w, np.random.default_rng(11), n)
        result = stats.kstest(draws, lambda x: 1.0 - survival(w, x))
        assert result.statistic < 1.63 / math.sqrt(n)


class TestTabulated:
    def make(self):
        grid = TimeGrid.spanning(10.0, 0.01)
        return Tabulated(GridFunction(grid, np.exp(-grid.values)), 1.0)

    def test_survival(self):
        assert self.make().survival(2.0) == pytest.approx(math.exp(-2.0), abs=1e-4)

    def test_tail_is_exponential(self):
        w = self.make()
        assert w.survival(12.0) == pytest.approx(w.survival(10.0) * math.exp(-2.0), rel=1e-12)

    def test_mean(self):
        assert self.make().mean() == pytest.approx(1.0, abs=1e-4)

    def test_bad_mass(self):
        grid = TimeGrid.spanning(10.0, 0.01)
        with pytest.raises(ValueError, match="integrates"):
            Tabulated(GridFunction(grid, 2 * np.exp(-grid.values)), 1.0)

    def test_sprinkling_is_flat(self):
        f = self.make().sprinkling(TimeGrid.spanning(5.0, 0.01))
        np.testing.assert_allclose(f.samples, 1.0, atol=1e-4)


class TestAgedTables:
    @pytest.mark.parametrize("w", [Exponential(1.0), BIEXP, FRACTIONAL], ids=["exp", "biexp", "ml"])
    def test_aged_waiting_is_minus_survival_slope(self, w):
        grid = TimeGrid.spanning(20.0, 0.01)
        table = AgedRenewalTables(w, grid, 5.0).at_age(5.0)
        slope = -np.gradient(table.survival.samples, grid.step)
        start = grid.index(1.0)
        np.testing.assert_allclose(table.waiting.samples[start:-1], slope[start:-1], atol=1e-4)

    @pytest.mark.parametrize(
        "w, tol", [(Exponential(1.0), 1e-4), (BIEXP, 1e-4), (FRACTIONAL, 1e-3)], ids=["exp", "biexp", "ml"]
    )
    def test_aged_waiting_mass(self, w, tol):
        grid = TimeGrid.spanning(20.0, 0.01)
        table = AgedRenewalTables(w, grid, 5.0).at_age(5.0)
        mass = integrate_grid(table.waiting) + table.survival.samples[-1]
        assert mass == pytest.approx(1.0, abs=tol)

    def test_markov_collapse(self):
        grid = TimeGrid.spanning(10.0, 0.01)
        tables = AgedRenewalTables(Exponential(1.0), grid, 10.0)
        expected = np.exp(-grid.values)
        for t in (0.0, 1.0, 10.0):
            table = tables.at_age(t)
            np.testing.assert_allclose(table.survival.samples, expected, atol=1e-8)
            np.testing.assert_allclose(table.waiting.samples, expected, atol=1e-8)
            np.testing.assert_allclose(table.sprinkling.samples, 1.0, atol=1e-8)

    def test_fresh_biexponential(self):
        grid = TimeGrid.spanning(50.0, 0.01)
        tables = AgedRenewalTables(BIEXP, grid, 0.0)
        direct = 0.8 * np.exp(-grid.values) + 0.2 * np.exp(-0.05 * grid.values)
        np.testing.assert_allclose(tables.at_age(0.0).survival.samples, direct, atol=1e-8)
        np.testing.assert_allclose(tables.at_age(0.0).waiting.samples, BIEXP.density(grid.values))
        np.testing.assert_allclose(tables.at_age(0.0).correction.samples, 0.0)

    def test_aged_biexponential_closed_form(self):
        grid = TimeGrid.spanning(20.0, 0.01)
        tables = AgedRenewalTables(BIEXP, grid, 10.0)
        exact = biexp_aged_survival(BIEXP, grid.values, 10.0)
        np.testing.assert_allclose(tables.at_age(10.0).survival.samples, exact, atol=1e-6)

    def test_stationary_limit(self):
        tau = np.linspace(0.0, 50.0, 501)
        stationary = np.exp(-tau) / 6 + 5 * np.exp(-0.05 * tau) / 6
        np.testing.assert_allclose(biexp_aged_survival(BIEXP, tau, 200.0), stationary, atol=1e-6)
        np.testing.assert_allclose(biexp_aged_survival(BIEXP, tau, math.inf), stationary, atol=1e-12)
        assert biexp_asymptotic_weights(BIEXP) == pytest.approx((1 / 6, 5 / 6))

    @pytest.mark.parametrize("t", [2.0, 10.0])
    def test_survival_shape(self, t):
        grid = TimeGrid.spanning(20.0, 0.05)
        values = AgedRenewalTables(FRACTIONAL, grid, t).at_age(t).survival.samples
        assert values[0] == 1.0
        assert np.all((values >= 0) & (values <= 1))
        assert np.all(np.diff(values) <= 0)

    def test_point_queries(self):
        grid = TimeGrid.spanning(10.0, 0.01)
        tables = AgedRenewalTables(BIEXP, grid, 5.0)
        assert aged_survival(tables, 2.0, 5.0) == pytest.approx(float(biexp_aged_survival(BIEXP, 2.0, 5.0)), abs=1e-6)
        assert aged_sprinkling(tables, 2.0, 5.0) == pytest.approx(biexp_sprinkling(BIEXP, 7.0), abs=1e-6)
        assert sprinkling_correction(tables, 2.0, 5.0) == pytest.approx(
            biexp_sprinkling(BIEXP, 7.0) - biexp_sprinkling(BIEXP, 2.0), abs=1e-6
        )
        assert aged_waiting(tables, 0.0, 5.0) == pytest.approx(biexp_sprinkling(BIEXP, 5.0), abs=1e-6)

    def test_age_outside_tables(self):
        tables = AgedRenewalTables(BIEXP, TimeGrid.spanning(5.0, 0.1), 2.0)
        with pytest.raises(OffGridError):
            tables.at_age(3.0)

    def test_tau_off_grid(self):
        tables = AgedRenewalTables(BIEXP, TimeGrid.spanning(5.0, 0.1), 2.0)
        with pytest.raises(OffGridError):
            aged_survival(tables, 1.234, 1.0)

    def test_sprinkling_from_aged_waiting(self):
        grid = TimeGrid.spanning(20.0, 0.01)
        tables = AgedRenewalTables(BIEXP, grid, 3.0)
        rebuilt = sprinkling_from_aged_waiting(tables, 3.0)
        np.testing.assert_allclose(rebuilt.samples, biexp_sprinkling(BIEXP, grid.values + 3.0), atol=1e-4)

    def test_age_derivative(self):
        grid = TimeGrid.spanning(10.0, 0.01)
        tables = AgedRenewalTables(BIEXP, grid, 5.0)
        slope = -(BIEXP.mean_rate - 1 / BIEXP.mean()) * BIEXP.relaxation_rate * math.exp(-BIEXP.relaxation_rate * 6.0)
        assert sprinkling_age_derivative(tables, 1.0, 5.0) == pytest.approx(slope, abs=1e-4)

    def test_aged_kernel_markov(self):
        grid = TimeGrid.spanning(30.0, 0.01)
        tables = AgedRenewalTables(Exponential(1.0), grid, 5.0)
        assert aged_kernel_laplace(tables, 1.0, 5.0, tail_rate=1.0) == pytest.approx(1.0, abs=1e-4)

    def test_fractional_aging_drift(self):
        grid = TimeGrid.spanning(60.0, 0.05)
        tables = AgedRenewalTables(FRACTIONAL, grid, 40.0)
        drift = np.max(np.abs(tables.at_age(40.0).survival.samples - tables.at_age(20.0).survival.samples))
        assert drift > 0.01


class TestFractionalRoutes:
    @pytest.mark.parametrize("tau", [0.5, 1.0, 4.0])
    def test_series_at_zero_age(self, tau):
        assert aged_survival_series(0.5, 1.0, tau, 0.0) == pytest.approx(exp_erfc(math.sqrt(tau)), abs=1e-10)

    def test_series_matches_convolution(self):
        grid = TimeGrid.spanning(8.0, 0.01)
        tables = AgedRenewalTables(FRACTIONAL, grid, 1.0)
        conv = tables.at_age(1.0).survival.samples
        for tau in (0.5, 1.0, 2.0, 5.0):
            k = grid.index(tau)
            assert conv[k] == pytest.approx(aged_survival_series(0.5, 1.0, tau, 1.0), abs=1e-4)

    def test_asymptotic_matches_convolution(self):
        grid = TimeGrid.spanning(100.0, 0.01)
        tables = AgedRenewalTables(FRACTIONAL, grid, 10.0)
        conv = tables.at_age(10.0).survival.samples
        far = grid.values >= 100.0 - 1e-9
        approx = aged_survival_asymptotic(0.5, 1.0, grid.values[far], 10.0)
        np.testing.assert_allclose(approx, conv[far], rtol=0.01)

    def test_series_argument_guard(self):
        with pytest.raises(NumericalGuardError):
            aged_survival_series(0.5, 1.0, 200.0, 0.0)

    def test_asymptotic_needs_fractional(self):
        with pytest.raises(ValueError):
            aged_survival_asymptotic(1.0, 1.0, 10.0, 1.0)


class TestEventCounts:
    @pytest.mark.parametrize("w", [Exponential(1.0), BIEXP, FRACTIONAL])
    def test_single_interval_normalization(self, w):
        table = event_count_table(w, TimeGrid.spanning(20.0, 0.02))
        np.testing.assert_allclose(table.sum(axis=0), 1.0, atol=1e-4)

    @pytest.mark.parametrize("w", [Exponential(1.0), BIEXP, FRACTIONAL])
    def test_two_interval_normalization(self, w):
        table = two_time_event_table(w, TimeGrid.spanning(20.0, 0.02), 5.0)
        np.testing.assert_allclose(table.sum(axis=(0, 1)), 1.0, atol=1e-4)

    def test_poisson_counts(self):
        probs = event_count_probs(Exponential(1.0), 2.0)
        assert probs[0] == pytest.approx(math.exp(-2.0))
        assert probs[1] == pytest.approx(2.0 * math.exp(-2.0), abs=1e-4)
        assert probs[2] == pytest.approx(2.0 * math.exp(-2.0), abs=1e-4)

    def test_poisson_two_time_independence(self):
        probs = two_time_event_probs(Exponential(1.0), 1.5, 2.0)
        assert probs[0, 0] == pytest.approx(math.exp(-3.5), abs=1e-6)
        assert probs[1, 1] == pytest.approx(1.5 * math.exp(-1.5) * 2.0 * math.exp(-2.0), abs=1e-3)

    def test_negative_n_max(self):
        with pytest.raises(ValueError):
            event_count_table(BIEXP, TimeGrid.spanning(1.0, 0.1), -1)
