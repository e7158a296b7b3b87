"""Tests for grids, convolutions, Volterra solvers and special functions."""

import math

import numpy as np
import pytest

from renewal_quantum.core.errors import NumericalGuardError, OffGridError, StructuralError, TruncationWarning
from renewal_quantum.core.numerics import (
    GridFunction,
    TimeGrid,
    convolve,
    exp_erfc,
    incomplete_beta,
    integrate_grid,
    interval_weights,
    laplace_numeric,
    mittag_leffler,
    solve_renewal,
    solve_renewal_function,
    stieltjes_convolve,
)
from renewal_quantum.core.renewal import BiExponential, biexp_sprinkling


def on_grid(grid, fn, singular_exponent=None):
    with np.errstate(divide="ignore"):
        return GridFunction(grid, fn(grid.values), singular_exponent)


class TestTimeGrid:
    def test_spanning_count(self):
        grid = TimeGrid.spanning(1.0, 0.1)
        assert grid.count == 11
        assert grid.span == pytest.approx(1.0)

    def test_span_not_multiple(self):
        with pytest.raises(OffGridError):
            TimeGrid.spanning(1.05, 0.1)

    def test_index(self):
        grid = TimeGrid.spanning(2.0, 0.01)
        assert grid.index(1.23) == 123

    def test_index_off_grid(self):
        with pytest.raises(OffGridError):
            TimeGrid.spanning(2.0, 0.01).index(1.234)

    def test_index_beyond_span(self):
        with pytest.raises(OffGridError):
            TimeGrid.spanning(2.0, 0.01).index(3.0)

    def test_rejects_bad_step(self):
        with pytest.raises(ValueError):
            TimeGrid(0.0, 10)


class TestGridFunction:
    def test_shape_mismatch(self):
        with pytest.raises(StructuralError):
            GridFunction(TimeGrid(0.1, 5), np.zeros(4))

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            GridFunction(TimeGrid(0.1, 3), np.array([1.0, np.inf, 2.0]))

    def test_singular_origin_allowed(self):
        fn = GridFunction(TimeGrid(0.1, 3), np.array([np.inf, 1.0, 2.0]), -0.5)
        assert fn.is_singular

    def test_zero_exponent_is_regular(self):
        fn = GridFunction(TimeGrid(0.1, 3), np.ones(3), 0.0)
        assert not fn.is_singular


class TestQuadrature:
    @pytest.mark.parametrize("k", [1, 3, 4, 5, 12])
    def test_weights_integrate_constants(self, k):
        grid = TimeGrid(0.1, 20)
        assert interval_weights(grid, k).sum() == pytest.approx(k * 0.1)

    def test_integrate_exponential(self):
        grid = TimeGrid.spanning(30.0, 0.01)
        assert integrate_grid(on_grid(grid, lambda t: np.exp(-t))) == pytest.approx(1.0 - math.exp(-30.0), rel=1e-8)

    def test_integrate_singular(self):
        grid = TimeGrid.spanning(4.0, 0.01)
        assert integrate_grid(on_grid(grid, lambda t: t**-0.5, -0.5)) == pytest.approx(4.0, rel=1e-10)


class TestConvolve:
    def test_constants(self):
        grid = TimeGrid.spanning(5.0, 0.01)
        one = GridFunction(grid, np.ones(grid.count))
        np.testing.assert_allclose(convolve(one, one).samples, grid.values, atol=1e-10)

    def test_exponentials(self):
        grid = TimeGrid.spanning(10.0, 0.01)
        e = on_grid(grid, lambda t: np.exp(-t))
        np.testing.assert_allclose(convolve(e, e).samples, grid.values * np.exp(-grid.values), atol=1e-6)

    def test_singular_operand(self):
        grid = TimeGrid.spanning(4.0, 0.01)
        one = GridFunction(grid, np.ones(grid.count))
        g = on_grid(grid, lambda t: t**-0.5, -0.5)
        np.testing.assert_allclose(convolve(one, g).samples, 2 * np.sqrt(grid.values), atol=1e-8)

    def test_commutative(self):
        grid = TimeGrid.spanning(6.0, 0.02)
        f = on_grid(grid, lambda t: np.cos(t) * np.exp(-0.3 * t))
        g = on_grid(grid, lambda t: 1.0 / (1.0 + t))
        np.testing.assert_allclose(convolve(f, g).samples, convolve(g, f).samples, atol=1e-10)

    def test_bilinear(self):
        grid = TimeGrid.spanning(6.0, 0.02)
        f = on_grid(grid, np.sin)
        g = on_grid(grid, np.cos)
        h = on_grid(grid, lambda t: np.exp(-t))
        combined = GridFunction(grid, 2.0 * g.samples + h.samples)
        expected = 2.0 * convolve(f, g).samples + convolve(f, h).samples
        np.testing.assert_allclose(convolve(f, combined).samples, expected, atol=1e-10)

    def test_grid_mismatch(self):
        a = GridFunction(TimeGrid(0.1, 5), np.ones(5))
        b = GridFunction(TimeGrid(0.2, 5), np.ones(5))
        with pytest.raises(StructuralError):
            convolve(a, b)

    def test_two_singular_operands(self):
        grid = TimeGrid.spanning(1.0, 0.1)
        g = on_grid(grid, lambda t: t**-0.5, -0.5)
        with pytest.raises(ValueError):
            convolve(g, g)


class TestStieltjes:
    def test_constant_integrand_gives_cdf(self):
        grid = TimeGrid.spanning(5.0, 0.01)
        cdf = on_grid(grid, lambda t: 1.0 - np.exp(-t))
        one = GridFunction(grid, np.ones(grid.count))
        np.testing.assert_allclose(stieltjes_convolve(cdf, one).samples, cdf.samples, atol=1e-12)

    def test_singular_integrand_rejected(self):
        grid = TimeGrid.spanning(1.0, 0.1)
        with pytest.raises(ValueError):
            stieltjes_convolve(on_grid(grid, lambda t: t), on_grid(grid, lambda t: t**-0.5, -0.5))


class TestSolveRenewal:
    def test_poisson_sprinkling_is_flat(self):
        grid = TimeGrid.spanning(20.0, 0.01)
        f = solve_renewal(on_grid(grid, lambda t: np.exp(-t)))
        np.testing.assert_allclose(f.samples, 1.0, atol=1e-7)

    def test_discrete_residual(self):
        grid = TimeGrid.spanning(20.0, 0.05)
        w = on_grid(grid, lambda t: 0.8 * np.exp(-t) + 0.01 * np.exp(-0.05 * t))
        f = solve_renewal(w)
        residual = f.samples - w.samples - convolve(w, f).samples
        assert np.max(np.abs(residual[5:])) < 1e-10

    def test_biexponential_closed_form(self):
        w = BiExponential(0.8, 1.0, 0.2, 0.05)
        grid = TimeGrid.spanning(50.0, 0.01)
        f = solve_renewal(on_grid(grid, w.density))
        np.testing.assert_allclose(f.samples, biexp_sprinkling(w, grid.values), atol=1e-6)
        assert f.samples[0] == pytest.approx(0.81)

    def test_biexponential_long_time_limit(self):
        w = BiExponential(0.8, 1.0, 0.2, 0.05)
        assert biexp_sprinkling(w, 200.0) == pytest.approx(1 / 4.8, abs=1e-6)

    def test_coarse_step_guard(self):
        grid = TimeGrid(0.01, 100)
        samples = np.zeros(100)
        samples[0] = 150.0
        with pytest.raises(NumericalGuardError, match="too coarse"):
            solve_renewal(GridFunction(grid, samples))

    def test_excess_mass_rejected(self):
        grid = TimeGrid.spanning(10.0, 0.01)
        with pytest.raises(ValueError, match="integrates"):
            solve_renewal(on_grid(grid, lambda t: 2 * np.exp(-t)))

    def test_singular_rejected(self):
        grid = TimeGrid.spanning(1.0, 0.01)
        with pytest.raises(ValueError):
            solve_renewal(on_grid(grid, lambda t: 0.5 * t**-0.5, -0.5))

    def test_renewal_function_poisson(self):
        grid = TimeGrid.spanning(5.0, 0.01)
        m = solve_renewal_function(on_grid(grid, lambda t: 1.0 - np.exp(-t)))
        np.testing.assert_allclose(m.samples, grid.values, atol=1e-3)


class TestLaplace:
    def test_exponential(self):
        grid = TimeGrid.spanning(30.0, 0.01)
        assert laplace_numeric(on_grid(grid, lambda t: np.exp(-t)), 1.0, tail_rate=1.0) == pytest.approx(0.5, rel=1e-6)

    def test_biexponential_density(self):
        w = BiExponential(0.8, 1.0, 0.2, 0.05)
        grid = TimeGrid.spanning(100.0, 0.01)
        value = laplace_numeric(on_grid(grid, w.density), 1.0, tail_rate=0.05)
        assert value == pytest.approx(0.8 * 0.5 + 0.2 * 0.05 / 1.05, rel=1e-6)

    def test_constant_with_tail(self):
        grid = TimeGrid.spanning(10.0, 0.01)
        one = GridFunction(grid, np.ones(grid.count))
        assert laplace_numeric(one, 2.0, tail_rate=0.0) == pytest.approx(0.5, rel=1e-6)

    def test_truncation_warning(self):
        grid = TimeGrid.spanning(10.0, 0.1)
        with pytest.warns(TruncationWarning):
            laplace_numeric(GridFunction(grid, np.ones(grid.count)), 0.1)

    def test_renewal_identity(self):
        grid = TimeGrid.spanning(60.0, 0.01)
        w = on_grid(grid, lambda t: 0.8 * np.exp(-t) + 0.01 * np.exp(-0.05 * t))
        f = solve_renewal(w)
        for u in (0.5, 1.0, 2.0):
            wu = laplace_numeric(w, u, tail_rate=0.05)
            fu = laplace_numeric(f, u, tail_rate=0.0)
            assert fu * (1.0 - wu) == pytest.approx(wu, abs=1e-4)

    def test_non_positive_u(self):
        grid = TimeGrid.spanning(1.0, 0.1)
        with pytest.raises(ValueError):
            laplace_numeric(GridFunction(grid, np.ones(grid.count)), 0.0)


class TestMittagLeffler:
    def test_origin(self):
        assert mittag_leffler(0.5, 0.0) == 1.0

    def test_exponential_case(self):
        assert mittag_leffler(1.0, -1.0) == pytest.approx(math.exp(-1.0), rel=1e-12)

    def test_half_order_value(self):
        assert mittag_leffler(0.5, -1.0) == pytest.approx(0.427584, abs=1e-6)

    @pytest.mark.parametrize("amplitude", [0.5, 1.0])
    def test_erfc_closed_form(self, amplitude):
        tau = np.linspace(0.0, 50.0, 2001)
        z = amplitude * np.sqrt(tau)
        np.testing.assert_allclose(mittag_leffler(0.5, -z), exp_erfc(z), rtol=1e-8, atol=1e-12)

    def test_monotone(self):
        x = -np.linspace(0.0, 80.0, 801)
        values = mittag_leffler(0.7, x)
        assert np.all(np.diff(values) <= 1e-14)

    def test_shape_preserved(self):
        assert mittag_leffler(0.5, -np.ones((2, 3))).shape == (2, 3)

    def test_positive_argument_rejected(self):
        with pytest.raises(ValueError):
            mittag_leffler(0.5, 1.0)

    def test_unsupported_beta(self):
        with pytest.raises(ValueError):
            mittag_leffler(0.5, -1.0, beta=2.0)


class TestIncompleteBeta:
    def test_complete(self):
        assert incomplete_beta(1.0, 0.5, 1.5) == pytest.approx(math.pi / 2, rel=1e-10)

    def test_zero(self):
        assert incomplete_beta(0.0, 2.0, 3.0) == 0.0

    def test_uniform(self):
        assert incomplete_beta(0.5, 1.0, 1.0) == pytest.approx(0.5)

    def test_domain(self):
        with pytest.raises(ValueError):
            incomplete_beta(1.5, 1.0, 1.0)
