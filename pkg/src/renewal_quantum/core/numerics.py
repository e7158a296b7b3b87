"""Uniform-grid quadrature, convolution, Volterra solvers and special functions.

Everything here works on :class:`TimeGrid` (``t_k = k * step``) and
:class:`GridFunction` samples. A grid function may carry an integrable
``t**beta`` singularity at the origin (``-1 < beta < 0``); it is then handled
through its regular part ``r(t) = g(t) * t**(-beta)`` with exact moments of
``t**beta`` on every cell.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import integrate, signal, special

from renewal_quantum.core.errors import (
    NumericalGuardError,
    OffGridError,
    StructuralError,
    TruncationWarning,
)

log = logging.getLogger(__name__)

GRID_ATOL = 1e-9

# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = k * step`` for ``k = 0 .. count - 1``."""

    step: float
    count: int

    def __post_init__(self):
        if not (np.isfinite(self.step) and self.step > 0):
            raise ValueError(f"grid step must be positive, got {self.step}")
        if int(self.count) != self.count or self.count < 1:
            raise ValueError(f"grid count must be a positive integer, got {self.count}")
        object.__setattr__(self, "step", float(self.step))
        object.__setattr__(self, "count", int(self.count))

    @classmethod
    def spanning(cls, span: float, step: float) -> "TimeGrid":
        """Grid covering ``[0, span]``; ``span`` must be a multiple of ``step``."""
        if span < 0:
            raise ValueError(f"grid span must be non-negative, got {span}")
        intervals = int(round(span / step))
        if abs(intervals * step - span) > GRID_ATOL * max(1.0, span):
            raise OffGridError(f"span {span} is not a multiple of step {step}")
        return cls(step, intervals + 1)

    @property
    def span(self) -> float:
        return (self.count - 1) * self.step

    @cached_property
    def values(self) -> np.ndarray:
        out = np.arange(self.count) * self.step
        out.setflags(write=False)
        return out

    def with_count(self, count: int) -> "TimeGrid":
        return TimeGrid(self.step, count)

    def index(self, t: float) -> int:
        """Index of the grid point at time ``t``.

        Raises:
            OffGridError: If ``t`` is not (within rounding) a grid point.
        """
        k = int(round(t / self.step))
        if k < 0 or k >= self.count or abs(k * self.step - t) > GRID_ATOL * max(1.0, abs(t)):
            raise OffGridError(f"time {t} is not on the grid (step {self.step}, span {self.span})")
        return k

    def indices(self, times) -> np.ndarray:
        return np.array([self.index(t) for t in np.atleast_1d(times)], dtype=int)


@dataclass(frozen=True)
class GridFunction:
    """Samples of a function on a :class:`TimeGrid`.

    ``singular_exponent`` flags an integrable ``t**beta`` singularity at the
    origin; the sample at ``k = 0`` is then ignored (it may be ``inf``).
    """

    grid: TimeGrid
    samples: np.ndarray
    singular_exponent: float | None = None

    def __post_init__(self):
        arr = np.array(self.samples, dtype=float)
        if arr.shape != (self.grid.count,):
            raise StructuralError(
                f"expected {self.grid.count} samples, got array of shape {arr.shape}"
            )
        beta = self.singular_exponent
        if beta is not None:
            if not -1.0 < beta <= 0.0:
                raise ValueError(f"singular exponent must lie in (-1, 0], got {beta}")
            if beta == 0.0:
                object.__setattr__(self, "singular_exponent", None)
        first = 1 if self.is_singular else 0
        if not np.all(np.isfinite(arr[first:])):
            raise ValueError("grid function samples must be finite away from a flagged origin")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    @property
    def is_singular(self) -> bool:
        return self.singular_exponent is not None

    def at(self, t: float) -> float:
        return float(self.samples[self.grid.index(t)])

    def regular_part(self) -> np.ndarray:
        """``g(t) * t**(-beta)``, with the origin value extrapolated linearly."""
        if not self.is_singular:
            return np.array(self.samples)
        t = self.grid.values
        out = np.empty(self.grid.count)
        out[1:] = self.samples[1:] * t[1:] ** (-self.singular_exponent)
        if self.grid.count > 2:
            out[0] = 2.0 * out[1] - out[2]
        elif self.grid.count == 2:
            out[0] = out[1]
        else:
            out[0] = 0.0
        return out


def _require_same_grid(*functions: GridFunction) -> TimeGrid:
    grid = functions[0].grid
    for fn in functions[1:]:
        if fn.grid != grid:
            raise StructuralError(f"grid mismatch: {fn.grid} vs {grid}")
    return grid


# ---------------------------------------------------------------------------
# Quadrature weights
# ---------------------------------------------------------------------------

_GREGORY_END = np.array([3.0 / 8.0, 7.0 / 6.0, 23.0 / 24.0])


def _cell_moments(step: float, cells: int, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Weights ``(a_c, b_c)`` of the linear basis on cell ``c`` against ``s**beta``."""
    c = np.arange(cells, dtype=float)
    m0 = step ** (beta + 1) * ((c + 1) ** (beta + 1) - c ** (beta + 1)) / (beta + 1)
    m1 = step ** (beta + 1) * ((c + 1) ** (beta + 2) - c ** (beta + 2)) / (beta + 2)
    return (c + 1) * m0 - m1, m1 - c * m0


def interval_weights(grid: TimeGrid, k: int, singular_exponent: float | None = None) -> np.ndarray:
    """Quadrature weights for ``int_0^{t_k}`` on grid points ``0 .. k``.

    Regular integrands get the trapezoid rule with fourth-order Gregory end
    corrections once six points are available. With a singular exponent the
    weights apply to the regular part of the integrand.
    """
    h = grid.step
    if k < 0 or k >= grid.count:
        raise OffGridError(f"index {k} outside grid of {grid.count} points")
    weights = np.zeros(k + 1)
    if k == 0:
        return weights
    if singular_exponent is not None and singular_exponent != 0.0:
        a, b = _cell_moments(h, k, singular_exponent)
        weights[:k] += a
        weights[1:] += b
        return weights
    weights[:] = h
    if k >= 5:
        weights[:3] = h * _GREGORY_END
        weights[-3:] = h * _GREGORY_END[::-1]
    else:
        weights[0] = weights[-1] = h / 2
    return weights


def integrate_grid(fn: GridFunction) -> float:
    """``int_0^{span} fn(t) dt`` with :func:`interval_weights`."""
    k = fn.grid.count - 1
    weights = interval_weights(fn.grid, k, fn.singular_exponent)
    return float(weights @ fn.regular_part())


# ---------------------------------------------------------------------------
# Convolutions
# ---------------------------------------------------------------------------


def convolve(f: GridFunction, g: GridFunction) -> GridFunction:
    """Product-integration convolution ``(f*g)(t_k) = int_0^{t_k} f(t_k - s) g(s) ds``.

    Regular operands use the trapezoid rule with Gregory end corrections once
    six nodes are available. If one operand carries a singular
    exponent, the product of the other operand with its regular part is
    interpolated linearly on each cell and integrated exactly against
    ``s**beta``; the first cell therefore gets the exact ``h**(beta+1)`` moment.

    Raises:
        StructuralError: If the grids differ.
        ValueError: If both operands are singular.
    """
    grid = _require_same_grid(f, g)
    if f.is_singular and g.is_singular:
        raise ValueError("at most one convolution operand may be singular")
    if f.is_singular:
        f, g = g, f
    n, h = grid.count, grid.step
    fv = f.samples
    if not g.is_singular:
        gv = g.samples
        full = signal.fftconvolve(fv, gv)[:n]
        out = h * (full - 0.5 * fv * gv[0] - 0.5 * fv[0] * gv)
        if n > 5:
            # Gregory end corrections from t_5 on
            k = np.arange(5, n)
            for j, delta in enumerate(_GREGORY_END - (0.5, 1.0, 1.0)):
                out[5:] += h * delta * (fv[k - j] * gv[j] + fv[j] * gv[k - j])
        out[0] = 0.0
        return GridFunction(grid, out)

    r = g.regular_part()
    a, b = _cell_moments(h, n - 1, g.singular_exponent)
    node = np.zeros(n)
    node[: n - 1] += a
    node[1:] += b
    out = signal.fftconvolve(fv, r * node)[:n]
    # the newest node only sees the right half of its last cell
    out[1:] += fv[0] * r[1:] * (b - node[1:])
    out[0] = 0.0
    return GridFunction(grid, out)


def _stieltjes(increments: np.ndarray, g: np.ndarray) -> np.ndarray:
    """``out[k] = sum_{c<k} d_c (g[k-c] + g[k-c-1]) / 2`` for ``len(g)`` points."""
    n = g.size
    d = np.zeros(n)
    m = min(increments.size, n)
    d[:m] = increments[:m]
    full = signal.fftconvolve(d, g)[:n]
    out = 0.5 * (full - d * g[0])
    out[1:] += 0.5 * full[:-1]
    out[0] = 0.0
    return out


def stieltjes_convolve(cdf: GridFunction, g: GridFunction) -> GridFunction:
    """``int_0^{t_k} g(t_k - s) dF(s)`` from the cell increments of ``F``.

    Only the cumulative ``F`` is needed, so densities with integrable
    singularities are handled through their exactly known integrals.
    """
    grid = _require_same_grid(cdf, g)
    if g.is_singular:
        raise ValueError("the integrand of a Stieltjes convolution must be regular")
    return GridFunction(grid, _stieltjes(np.diff(cdf.samples), g.samples))


# ---------------------------------------------------------------------------
# Volterra equations
# ---------------------------------------------------------------------------


def _trapezoid_march(wv: np.ndarray, h: float) -> np.ndarray:
    f = np.empty_like(wv)
    f[0] = wv[0]
    for k in range(1, wv.size):
        history = 0.5 * wv[k] * f[0] + np.dot(wv[k - 1 : 0 : -1], f[1:k])
        f[k] = (wv[k] + h * history) / (1.0 - 0.5 * h * wv[0])
    return f


def _gregory_march(wv: np.ndarray, h: float) -> np.ndarray:
    """Fourth-order march: Simpson-family starting block, Gregory weights from ``t_5``."""
    f = np.empty_like(wv)
    w0 = f[0] = wv[0]
    # first two steps solved together, the half-step value interpolated
    wm = (5 * wv[0] + 15 * wv[1] - 5 * wv[2] + wv[3]) / 16
    lhs = np.array(
        [
            [1 - h * w0 / 6 - h * wm / 2, h * wm / 12],
            [-4 * h * wv[1] / 3, 1 - h * w0 / 3],
        ]
    )
    rhs = np.array(
        [
            wv[1] + h * wv[1] * f[0] / 6 + h * wm * f[0] / 4,
            wv[2] + h * wv[2] * f[0] / 3,
        ]
    )
    f[1:3] = np.linalg.solve(lhs, rhs)
    f[3] = (wv[3] + 3 * h / 8 * (wv[3] * f[0] + 3 * wv[2] * f[1] + 3 * wv[1] * f[2])) / (
        1 - 3 * h * w0 / 8
    )
    f[4] = (
        wv[4] + h / 3 * (wv[4] * f[0] + 4 * wv[3] * f[1] + 2 * wv[2] * f[2] + 4 * wv[1] * f[3])
    ) / (1 - h * w0 / 3)
    denom = 1 - 3 * h * w0 / 8
    for k in range(5, wv.size):
        history = (
            np.dot(wv[k - 1 : 0 : -1], f[1:k])
            + 3 / 8 * wv[k] * f[0]
            + (wv[k - 1] * f[1] + wv[1] * f[k - 1]) / 6
            - (wv[k - 2] * f[2] + wv[2] * f[k - 2]) / 24
        )
        f[k] = (wv[k] + h * history) / denom
    return f


def solve_renewal(w: GridFunction, tol: float = 1e-6) -> GridFunction:
    """Solve ``f = w + w*f`` by marching on the grid.

    The convolution uses the same Gregory weights as :func:`convolve` from the
    sixth grid point on, so the discrete residual vanishes there to rounding.

    Args:
        w: Waiting-time density on the grid (regular at the origin).
        tol: Allowed excess of ``int w`` over one.

    Returns:
        The sprinkling density ``f(., 0)``.

    Raises:
        ValueError: If ``w`` is negative, singular, or carries more than unit mass.
        NumericalGuardError: If the step is too coarse for the march.
    """
    if w.is_singular:
        raise ValueError("solve_renewal needs a density that is finite at the origin")
    wv = w.samples
    if np.min(wv) < -1e-12:
        raise ValueError("waiting-time density must be non-negative")
    mass = integrate_grid(w)
    if mass > 1.0 + tol:
        raise ValueError(f"waiting-time density integrates to {mass:.8f} > 1")

    h = w.grid.step
    if h * wv[0] >= 1.0:
        raise NumericalGuardError(
            f"step {h} too coarse for w(0) = {wv[0]:.4g}; need step < {1.0 / wv[0]:.4g}"
        )
    f = _gregory_march(wv, h) if wv.size > 5 else _trapezoid_march(wv, h)
    if not np.all(np.isfinite(f)):
        raise NumericalGuardError("renewal march produced non-finite values")
    return GridFunction(w.grid, f)


def solve_renewal_function(cdf: GridFunction) -> GridFunction:
    """Renewal function ``m = F + m * dF`` (expected number of events up to ``t``).

    Works from the cumulative distribution of the waiting time, so it is valid
    for densities that diverge at the origin.
    """
    F = cdf.samples
    d = np.diff(F)
    m = np.zeros_like(F)
    m[0] = F[0]
    if F.size == 1:
        return GridFunction(cdf.grid, m)
    denom = 1.0 - 0.5 * d[0]
    for k in range(1, F.size):
        acc = 0.5 * d[0] * m[k - 1]
        if k >= 2:
            acc += 0.5 * np.dot(d[1:k], m[k - 1 : 0 : -1] + m[k - 2 :: -1])
        m[k] = (F[k] + acc) / denom
    return GridFunction(cdf.grid, m)


# ---------------------------------------------------------------------------
# Laplace transform
# ---------------------------------------------------------------------------


def laplace_numeric(
    f: GridFunction,
    u: float,
    tail_rate: float | None = None,
    tol: float = 1e-10,
) -> float:
    """``int_0^inf exp(-u t) f(t) dt`` from grid samples plus an analytic tail.

    Beyond the grid ``f`` is continued as ``f(T) exp(-tail_rate (t - T))``;
    without a tail rate the last sample is held constant and a
    :class:`TruncationWarning` is emitted when the tail is not negligible.
    """
    if u <= 0:
        raise ValueError(f"Laplace variable must be positive, got {u}")
    grid = f.grid
    t = grid.values
    weights = interval_weights(grid, grid.count - 1, f.singular_exponent)
    body = float(weights @ (f.regular_part() * np.exp(-u * t)))
    end = f.samples[-1] if grid.count > 1 or not f.is_singular else 0.0
    boundary = np.exp(-u * grid.span) * abs(end)
    kappa = 0.0 if tail_rate is None else float(tail_rate)
    if tail_rate is None and boundary > tol:
        warnings.warn(
            f"Laplace tail at u={u}: exp(-u*span)*|f(span)| = {boundary:.2e} > {tol:.0e}",
            TruncationWarning,
            stacklevel=2,
        )
    return body + end * np.exp(-u * grid.span) / (u + kappa)


# ---------------------------------------------------------------------------
# Special functions
# ---------------------------------------------------------------------------

ML_SERIES_LIMIT = 4.0
ML_ASYMPTOTIC_LIMIT = 40.0
_ML_ASYMPTOTIC_TERMS = 30
_ML_CHUNK = 512


def _ml_series(alpha: float, beta: float, x: np.ndarray) -> np.ndarray:
    k = np.arange(int(np.ceil(40.0 / alpha)) + 2, dtype=float)
    terms = np.power.outer(x, k) * special.rgamma(alpha * k + beta)
    return terms.sum(axis=1)


def _ml_asymptotic(alpha: float, beta: float, x: np.ndarray) -> np.ndarray:
    k = np.arange(1, _ML_ASYMPTOTIC_TERMS + 1, dtype=float)
    terms = np.power.outer(x, -k) * special.rgamma(beta - alpha * k)
    return -terms.sum(axis=1)


def _ml_integral(alpha: float, beta: float, z: np.ndarray) -> np.ndarray:
    """Integral representation on the negative axis after ``r = v**(1/alpha)``."""
    inv = 1.0 / alpha
    cos_a = np.cos(alpha * np.pi)
    scale = np.sin(alpha * np.pi) / (alpha * np.pi)
    peak = max(-cos_a, 0.0)
    derivative = beta != 1.0
    out = np.empty_like(z)
    order = np.argsort(z)
    for start in range(0, z.size, _ML_CHUNK):
        idx = order[start : start + _ML_CHUNK]
        T = z[idx] ** inv

        def integrand(v, T=T):
            p = v**inv
            with np.errstate(over="ignore", invalid="ignore"):
                val = np.exp(-T * p) / (v * v + 2.0 * v * cos_a + 1.0)
                if derivative:
                    val = val * p
            return np.where(np.isfinite(val), val, 0.0)

        points = [peak] if 0.0 < peak < 2.0 else None
        near, _ = integrate.quad_vec(
            integrand, 0.0, 2.0, epsabs=1e-14, epsrel=1e-12, norm="max", points=points
        )
        far, _ = integrate.quad_vec(integrand, 2.0, np.inf, epsabs=1e-14, epsrel=1e-12, norm="max")
        value = scale * (near + far)
        if derivative:
            value = value * T ** (1.0 - alpha)
        out[idx] = value
    return out


def mittag_leffler(alpha: float, x, beta: float = 1.0):
    """Mittag-Leffler function ``E_{alpha,beta}(x)`` on the non-positive axis.

    Uses the power series while ``(-x)**(1/alpha) <= 4``, a smooth integral
    representation up to ``|x| = 40`` and the asymptotic series beyond.

    Args:
        alpha: Order in ``(0, 1]``.
        x: Scalar or array of non-positive arguments.
        beta: Second parameter; ``1`` or ``alpha``.

    Returns:
        Float for scalar input, otherwise an array of the input's shape.

    Raises:
        ValueError: Outside the supported domain.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if beta != 1.0 and beta != alpha:
        raise ValueError("only beta = 1 and beta = alpha are supported")
    xa = np.asarray(x, dtype=float)
    if np.any(xa > 0):
        raise ValueError("mittag_leffler is implemented for x <= 0")
    flat = xa.reshape(-1)
    if alpha == 1.0:
        out = np.exp(flat)
    else:
        z = -flat
        out = np.empty_like(flat)
        series = z ** (1.0 / alpha) <= ML_SERIES_LIMIT
        asymptotic = z >= ML_ASYMPTOTIC_LIMIT
        middle = ~series & ~asymptotic
        if np.any(series):
            out[series] = _ml_series(alpha, beta, flat[series])
        if np.any(asymptotic):
            out[asymptotic] = _ml_asymptotic(alpha, beta, flat[asymptotic])
        if np.any(middle):
            out[middle] = _ml_integral(alpha, beta, z[middle])
    if xa.ndim == 0:
        return float(out[0])
    return out.reshape(xa.shape)


def exp_erfc(x):
    """``exp(x**2) erfc(x)`` without overflow."""
    return special.erfcx(x)


def incomplete_beta(x: float, a: float, b: float) -> float:
    """Unregularized incomplete Beta ``int_0^x s**(a-1) (1-s)**(b-1) ds``."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if a <= 0 or b <= 0:
        raise ValueError(f"a and b must be positive, got a={a}, b={b}")
    return float(special.betainc(a, b, x) * special.beta(a, b))
