"""Waiting-time distributions and aged renewal statistics.

A waiting time is one of four frozen variants (:class:`Exponential`,
:class:`BiExponential`, :class:`MittagLeffler`, :class:`Tabulated`). Each
exposes its density, survival, Laplace transform, mean, sampler and the
sprinkling density ``f(tau, 0)`` on a grid. Aged quantities (observation
starting at age ``t``) are tabulated lazily by :class:`AgedRenewalTables`.
"""

from __future__ import annotations

import logging
import math
import threading
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, signal, special
from scipy import fft as sfft

from renewal_quantum.core.errors import (
    NumericalGuardError,
    OffGridError,
    RenormalizationWarning,
    TruncationWarning,
)
from renewal_quantum.core.numerics import (
    GridFunction,
    TimeGrid,
    _stieltjes,
    convolve,
    interval_weights,
    laplace_numeric,
    mittag_leffler,
    solve_renewal,
)

log = logging.getLogger(__name__)

COUNT_TARGET = 1e-6
COUNT_WARN = 1e-4
N_MAX_CAP = 200
SERIES_ARGUMENT_LIMIT = 10.0
SERIES_TERM_LIMIT = 1e10


def _scalar_or_array(value, like):
    return float(value) if np.ndim(like) == 0 else value


# ---------------------------------------------------------------------------
# Waiting-time variants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Exponential:
    """Memoryless waiting time ``w(tau) = rate exp(-rate tau)``."""

    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError(f"rate must be positive, got {self.rate}")

    def density(self, tau):
        t = np.asarray(tau, dtype=float)
        return _scalar_or_array(self.rate * np.exp(-self.rate * t), tau)

    def survival(self, tau):
        t = np.asarray(tau, dtype=float)
        return _scalar_or_array(np.exp(-self.rate * t), tau)

    def laplace(self, u: float) -> float:
        return self.rate / (self.rate + u)

    def kernel_laplace(self, u: float) -> float:
        return self.rate

    def mean(self) -> float:
        return 1.0 / self.rate

    def sample(self, rng: np.random.Generator, size=None):
        return rng.exponential(1.0 / self.rate, size)

    def sprinkling(self, grid: TimeGrid) -> GridFunction:
        return GridFunction(grid, np.full(grid.count, self.rate))


@dataclass(frozen=True)
class BiExponential:
    """Two-rate mixture ``P_a rate_a exp(-rate_a tau) + P_b rate_b exp(-rate_b tau)``.

    Weights that do not sum to one are rescaled with a
    :class:`RenormalizationWarning`.
    """

    weight_a: float
    rate_a: float
    weight_b: float
    rate_b: float

    def __post_init__(self):
        if self.weight_a < 0 or self.weight_b < 0:
            raise ValueError("bi-exponential weights must be non-negative")
        if not (self.rate_a > 0 and self.rate_b > 0):
            raise ValueError("bi-exponential rates must be positive")
        total = self.weight_a + self.weight_b
        if total <= 0:
            raise ValueError("bi-exponential weights must not both vanish")
        if abs(total - 1.0) > 1e-12:
            warnings.warn(
                f"bi-exponential weights sum to {total:.6g}; rescaled to "
                f"({self.weight_a / total:.6g}, {self.weight_b / total:.6g})",
                RenormalizationWarning,
                stacklevel=3,
            )
            object.__setattr__(self, "weight_a", self.weight_a / total)
            object.__setattr__(self, "weight_b", self.weight_b / total)

    @property
    def weights(self) -> np.ndarray:
        return np.array([self.weight_a, self.weight_b])

    @property
    def rates(self) -> np.ndarray:
        return np.array([self.rate_a, self.rate_b])

    def density(self, tau):
        t = np.asarray(tau, dtype=float)[..., None]
        out = np.sum(self.weights * self.rates * np.exp(-self.rates * t), axis=-1)
        return _scalar_or_array(out, tau)

    def survival(self, tau):
        t = np.asarray(tau, dtype=float)[..., None]
        out = np.sum(self.weights * np.exp(-self.rates * t), axis=-1)
        return _scalar_or_array(out, tau)

    def laplace(self, u: float) -> float:
        return float(np.sum(self.weights * self.rates / (self.rates + u)))

    def kernel_laplace(self, u: float) -> float:
        w = self.laplace(u)
        return u * w / (1.0 - w)

    def mean(self) -> float:
        return float(np.sum(self.weights / self.rates))

    @property
    def mean_rate(self) -> float:
        return float(np.sum(self.weights * self.rates))

    @property
    def relaxation_rate(self) -> float:
        """Decay rate ``P_a rate_b + P_b rate_a`` of the sprinkling transient."""
        return self.weight_a * self.rate_b + self.weight_b * self.rate_a

    def sample(self, rng: np.random.Generator, size=None):
        pick = rng.random(size) < self.weight_a
        draw = rng.exponential(1.0, size)
        return draw / np.where(pick, self.rate_a, self.rate_b)

    def sprinkling(self, grid: TimeGrid) -> GridFunction:
        return GridFunction(grid, biexp_sprinkling(self, grid.values))


@dataclass(frozen=True)
class MittagLeffler:
    """Fractional waiting time with survival ``E_alpha(-amplitude tau**alpha)``."""

    alpha: float
    amplitude: float

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not self.amplitude > 0:
            raise ValueError(f"amplitude must be positive, got {self.amplitude}")

    def density(self, tau):
        t = np.asarray(tau, dtype=float)
        a, A = self.alpha, self.amplitude
        with np.errstate(divide="ignore"):
            out = A * t ** (a - 1.0) * mittag_leffler(a, -A * t**a, beta=a)
        return _scalar_or_array(out, tau)

    def survival(self, tau):
        t = np.asarray(tau, dtype=float)
        out = mittag_leffler(self.alpha, -self.amplitude * t**self.alpha)
        return _scalar_or_array(np.asarray(out), tau)

    def laplace(self, u: float) -> float:
        return self.amplitude / (self.amplitude + u**self.alpha)

    def kernel_laplace(self, u: float) -> float:
        return self.amplitude * u ** (1.0 - self.alpha)

    def mean(self) -> float:
        return 1.0 / self.amplitude if self.alpha == 1.0 else math.inf

    def sample(self, rng: np.random.Generator, size=None):
        # equivalent to (-ln U)[sin(a pi)/tan(a pi V) - cos(a pi)]**(1/a)
        a = self.alpha
        e = rng.exponential(1.0, size)
        v = rng.random(size)
        ratio = np.sin(a * np.pi * (1.0 - v)) / np.sin(a * np.pi * v)
        return self.amplitude ** (-1.0 / a) * e * ratio ** (1.0 / a)

    def sprinkling(self, grid: TimeGrid) -> GridFunction:
        """Closed form ``f(tau, 0) = amplitude tau**(alpha-1) / Gamma(alpha)``."""
        a = self.alpha
        if a == 1.0:
            return GridFunction(grid, np.full(grid.count, self.amplitude))
        t = grid.values
        values = np.empty(grid.count)
        values[0] = np.inf
        values[1:] = self.amplitude * t[1:] ** (a - 1.0) / special.gamma(a)
        return GridFunction(grid, values, singular_exponent=a - 1.0)


@dataclass(frozen=True)
class Tabulated:
    """Waiting-time density sampled on a grid, continued by an exponential tail.

    Beyond the last grid point ``w(tau) = w(T) exp(-tail_rate (tau - T))``.
    """

    table: GridFunction
    tail_rate: float
    _cdf: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.tail_rate > 0:
            raise ValueError(f"tail rate must be positive, got {self.tail_rate}")
        if self.table.is_singular:
            raise ValueError("tabulated densities must be finite at the origin")
        values = self.table.samples
        if np.min(values) < 0:
            raise ValueError("tabulated density must be non-negative")
        cdf = integrate.cumulative_trapezoid(values, dx=self.table.grid.step, initial=0.0)
        mass = cdf[-1] + values[-1] / self.tail_rate
        if abs(mass - 1.0) > 1e-3:
            raise ValueError(f"tabulated density plus tail integrates to {mass:.6f}, not 1")
        object.__setattr__(self, "_cdf", np.maximum.accumulate(cdf))

    @property
    def horizon(self) -> float:
        return self.table.grid.span

    def density(self, tau):
        t = np.asarray(tau, dtype=float)
        inside = np.interp(t, self.table.grid.values, self.table.samples)
        tail = self.table.samples[-1] * np.exp(-self.tail_rate * np.maximum(t - self.horizon, 0))
        return _scalar_or_array(np.where(t <= self.horizon, inside, tail), tau)

    def survival(self, tau):
        t = np.asarray(tau, dtype=float)
        inside = 1.0 - np.interp(t, self.table.grid.values, self._cdf)
        edge = 1.0 - self._cdf[-1]
        tail = edge * np.exp(-self.tail_rate * np.maximum(t - self.horizon, 0))
        return _scalar_or_array(np.where(t <= self.horizon, inside, tail), tau)

    def laplace(self, u: float) -> float:
        return laplace_numeric(self.table, u, tail_rate=self.tail_rate)

    def kernel_laplace(self, u: float) -> float:
        w = self.laplace(u)
        return u * w / (1.0 - w)

    def mean(self) -> float:
        grid = self.table.grid
        weights = interval_weights(grid, grid.count - 1)
        body = float(weights @ (grid.values * self.table.samples))
        T, k = self.horizon, self.tail_rate
        return body + self.table.samples[-1] * (T / k + 1.0 / k**2)

    def sample(self, rng: np.random.Generator, size=None):
        u = rng.random(size)
        extra = rng.exponential(1.0 / self.tail_rate, size)
        inside = np.interp(u, self._cdf, self.table.grid.values)
        return np.where(u < self._cdf[-1], inside, self.horizon + extra)

    def sprinkling(self, grid: TimeGrid) -> GridFunction:
        return solve_renewal(GridFunction(grid, self.density(grid.values)))


WaitingTime = Exponential | BiExponential | MittagLeffler | Tabulated


# ---------------------------------------------------------------------------
# Single-time statistics
# ---------------------------------------------------------------------------


def survival(w: WaitingTime, tau):
    """``P0(tau) = 1 - int_0^tau w``, closed form per variant."""
    if np.any(np.asarray(tau) < 0):
        raise ValueError("tau must be non-negative")
    return w.survival(tau)


def density(w: WaitingTime, tau):
    if np.any(np.asarray(tau) < 0):
        raise ValueError("tau must be non-negative")
    return w.density(tau)


def laplace_waiting(w: WaitingTime, u: float) -> float:
    if u <= 0:
        raise ValueError(f"Laplace variable must be positive, got {u}")
    return w.laplace(u)


def kernel_laplace(w: WaitingTime, u: float) -> float:
    """Memory kernel ``K(u) = u w(u) / (1 - w(u))``."""
    if u <= 0:
        raise ValueError(f"Laplace variable must be positive, got {u}")
    return w.kernel_laplace(u)


def mean_waiting_time(w: WaitingTime) -> float:
    return w.mean()


def sample_interval(w: WaitingTime, rng: np.random.Generator, size=None):
    """Draw waiting intervals from ``w`` with the caller's generator."""
    return w.sample(rng, size)


def biexp_sprinkling(w: BiExponential, tau):
    """``f(tau, 0) = <rate> - (<rate> - 1/<tau>) (1 - exp(-eta tau))``."""
    t = np.asarray(tau, dtype=float)
    mean_rate = w.mean_rate
    out = mean_rate - (mean_rate - 1.0 / w.mean()) * (1.0 - np.exp(-w.relaxation_rate * t))
    return _scalar_or_array(out, tau)


def biexp_asymptotic_weights(w: WaitingTime) -> tuple[float, float]:
    """Weights of the stationary aged survival ``P_i / (<tau> rate_i)``.

    Raises:
        ValueError: If ``w`` is not bi-exponential.
    """
    if not isinstance(w, BiExponential):
        raise ValueError(f"asymptotic weights need a bi-exponential waiting time, got {type(w).__name__}")
    mean = w.mean()
    return w.weight_a / (mean * w.rate_a), w.weight_b / (mean * w.rate_b)


def biexp_aged_survival(w: BiExponential, tau, t: float):
    """Closed-form aged survival for the bi-exponential case; ``t`` may be ``inf``."""
    tau_arr = np.asarray(tau, dtype=float)
    if math.isinf(t):
        wa, wb = biexp_asymptotic_weights(w)
        out = wa * np.exp(-w.rate_a * tau_arr) + wb * np.exp(-w.rate_b * tau_arr)
        return _scalar_or_array(out, tau)
    eta = w.relaxation_rate
    stationary = 1.0 / w.mean()
    transient = w.mean_rate - stationary
    out = np.zeros_like(tau_arr)
    for weight, rate in zip(w.weights, w.rates):
        decay = math.exp(-rate * t)
        if abs(rate - eta) > 1e-12:
            mixed = (math.exp(-eta * t) - decay) / (rate - eta)
        else:
            mixed = t * decay
        coeff = decay + stationary * (1.0 - decay) / rate + transient * mixed
        out = out + weight * coeff * np.exp(-rate * tau_arr)
    return _scalar_or_array(out, tau)


# ---------------------------------------------------------------------------
# Aged tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AgedTable:
    """Aged quantities at one age, all on the observation grid (``tau`` axis)."""

    age: float
    survival: GridFunction
    waiting: GridFunction
    sprinkling: GridFunction
    correction: GridFunction


class AgedRenewalTables:
    """Lazily built aged renewal statistics for one waiting time.

    Args:
        waiting: The waiting-time distribution.
        grid: Observation grid for ``tau``.
        max_age: Largest age that will be queried; the internal grid is
            extended by this much so every ``tau + t`` stays tabulated.

    Tables for distinct ages are built once under a lock and are read-only
    afterwards.
    """

    def __init__(self, waiting: WaitingTime, grid: TimeGrid, max_age: float = 0.0):
        self.waiting = waiting
        self.grid = grid
        self.max_age = float(max_age)
        extra = TimeGrid.spanning(self.max_age, grid.step).count - 1
        self.extended = grid.with_count(grid.count + extra)
        t = self.extended.values
        self.survival_ext = np.clip(np.asarray(waiting.survival(t), dtype=float), 0.0, 1.0)
        with np.errstate(divide="ignore"):
            density = np.asarray(waiting.density(t), dtype=float)
        self.density_ext = np.where(np.isfinite(density), density, 0.0)
        self.sprinkling_ext = waiting.sprinkling(self.extended)
        self._cache: dict[int, AgedTable] = {}
        self._lock = threading.Lock()

    @property
    def sprinkling0(self) -> GridFunction:
        """``f(tau, 0)`` on the observation grid."""
        return self.at_age(0.0).sprinkling

    def age_index(self, t: float) -> int:
        if t < 0 or t > self.max_age + 1e-9 * max(1.0, self.max_age):
            raise OffGridError(f"age {t} outside the tabulated range [0, {self.max_age}]")
        return self.extended.index(t)

    def at_age(self, t: float) -> AgedTable:
        a = self.age_index(t)
        with self._lock:
            table = self._cache.get(a)
            if table is None:
                table = self._build(a)
                self._cache[a] = table
        return table

    def _history_weights(self, a: int) -> np.ndarray:
        f0 = self.sprinkling_ext
        weights = interval_weights(self.extended, a, f0.singular_exponent)
        return weights * f0.regular_part()[: a + 1]

    def _build(self, a: int) -> AgedTable:
        log.debug("building aged tables for age index %d", a)
        grid, M = self.grid, self.grid.count
        f0 = self.sprinkling_ext
        beta = f0.singular_exponent
        age = a * grid.step
        f_vals = np.array(f0.samples[a : a + M])
        f_aged = GridFunction(grid, f_vals, beta if a == 0 else None)
        if a == 0:
            surv = self.survival_ext[:M]
            wait_vals = np.asarray(self.waiting.density(grid.values), dtype=float)
            wait = GridFunction(grid, wait_vals, beta if not np.isfinite(wait_vals[0]) else None)
            correction = GridFunction(grid, np.zeros(M))
            return AgedTable(age, GridFunction(grid, surv), wait, f_aged, correction)

        history = self._history_weights(a)
        span = a + M
        surv = self.survival_ext[a:span] + signal.fftconvolve(self.survival_ext[:span], history)[a:span]
        surv[0] = 1.0
        surv = np.minimum.accumulate(np.clip(surv, 0.0, 1.0))
        wait = self.density_ext[a:span] + signal.fftconvolve(self.density_ext[:span], history)[a:span]
        wait[0] = f_vals[0]
        wait = np.maximum(wait, 0.0)
        delta = f_vals - f0.samples[:M]
        return AgedTable(
            age,
            GridFunction(grid, surv),
            GridFunction(grid, wait),
            f_aged,
            GridFunction(grid, delta, beta),
        )


def _check_tau(tables: AgedRenewalTables, tau: float) -> int:
    return tables.grid.index(tau)


def aged_survival(tables: AgedRenewalTables, tau: float, t: float) -> float:
    """``P0~(tau, t)``: probability of no event in ``(t, t + tau)``."""
    return float(tables.at_age(t).survival.samples[_check_tau(tables, tau)])


def aged_waiting(tables: AgedRenewalTables, tau: float, t: float) -> float:
    """``w~(tau, t)``: density of the first event at ``t + tau``."""
    return float(tables.at_age(t).waiting.samples[_check_tau(tables, tau)])


def aged_sprinkling(tables: AgedRenewalTables, tau: float, t: float) -> float:
    """``f(tau, t)``: event rate at ``t + tau`` irrespective of earlier events."""
    return float(tables.at_age(t).sprinkling.samples[_check_tau(tables, tau)])


def sprinkling_correction(tables: AgedRenewalTables, tau: float, t: float) -> float:
    """``Delta(tau, t) = f(tau, t) - f(tau, 0)``."""
    return float(tables.at_age(t).correction.samples[_check_tau(tables, tau)])


def sprinkling_from_aged_waiting(tables: AgedRenewalTables, t: float) -> GridFunction:
    """``f(., t) = w~(., t) + f(., 0) * w~(., t)`` by grid convolution."""
    aged = tables.at_age(t).waiting
    if aged.is_singular:
        return tables.sprinkling0
    first = convolve(aged, tables.sprinkling0)
    return GridFunction(tables.grid, aged.samples + first.samples)


def sprinkling_age_derivative(tables: AgedRenewalTables, tau: float, t: float) -> float:
    """``Upsilon(tau, t) = d f(tau, t) / dt`` by central differences in age."""
    k = tables.extended.index(tau + t)
    f = tables.sprinkling_ext.samples
    h = tables.grid.step
    if k == 0 or not np.isfinite(f[k - 1]):
        return float((f[k + 1] - f[k]) / h)
    if k + 1 >= f.size:
        return float((f[k] - f[k - 1]) / h)
    return float((f[k + 1] - f[k - 1]) / (2 * h))


def aged_kernel_laplace(
    tables: AgedRenewalTables, u: float, t: float, tail_rate: float | None = None
) -> float:
    """Aged memory kernel ``u w~(u, t) / (1 - w~(u, t))``."""
    wt = laplace_numeric(tables.at_age(t).waiting, u, tail_rate=tail_rate)
    return u * wt / (1.0 - wt)


# ---------------------------------------------------------------------------
# Fractional closed forms
# ---------------------------------------------------------------------------


def aged_survival_asymptotic(alpha: float, A: float, tau, t: float):
    """Large-``tau`` aged survival ``[1/A + t**a/Gamma(1+a)] / [Gamma(1-a)(tau+t)**a]``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"asymptotic form needs 0 < alpha < 1, got {alpha}")
    tau_arr = np.asarray(tau, dtype=float)
    num = 1.0 / A + t**alpha / special.gamma(1.0 + alpha)
    out = num / (special.gamma(1.0 - alpha) * (tau_arr + t) ** alpha)
    return _scalar_or_array(out, tau)


def aged_survival_series(alpha: float, A: float, tau: float, t: float) -> float:
    """Series for the fractional aged survival.

    Sums ``sum_k [-A (tau+t)**a]**k / Gamma(a k + 1) * [1 + B_k]`` with
    ``B_k = A (tau+t)**a / Gamma(a) * B(t/(tau+t); a, 1 + k a)``, using
    compensated summation.

    Raises:
        NumericalGuardError: When the terms grow too large for double precision.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if tau < 0 or t < 0:
        raise ValueError("tau and t must be non-negative")
    total = tau + t
    if total == 0.0:
        return 1.0
    z = A * total**alpha
    if z > SERIES_ARGUMENT_LIMIT:
        raise NumericalGuardError(
            f"series argument A(tau+t)**alpha = {z:.3g} exceeds {SERIES_ARGUMENT_LIMIT}"
        )
    x = t / total
    prefactor = z / special.gamma(alpha)
    log_z = math.log(z)
    terms = []
    k = 0
    while True:
        log_mag = k * log_z - special.gammaln(alpha * k + 1.0)
        if log_mag > math.log(SERIES_TERM_LIMIT):
            raise NumericalGuardError(f"series term {k} exceeds {SERIES_TERM_LIMIT:.0e}")
        b = 0.0
        if x > 0:
            b = special.betainc(alpha, 1.0 + k * alpha, x) * special.beta(alpha, 1.0 + k * alpha)
        magnitude = math.exp(log_mag)
        terms.append((-1) ** k * magnitude * (1.0 + prefactor * b))
        if k > z ** (1.0 / alpha) / alpha and magnitude * (1.0 + prefactor) < 1e-18:
            break
        k += 1
        if k > 4000:
            raise NumericalGuardError("aged survival series did not converge")
    return math.fsum(terms)


# ---------------------------------------------------------------------------
# Event counts
# ---------------------------------------------------------------------------


def _count_rows(survival_values: np.ndarray, n_max: int | None) -> tuple[np.ndarray, list]:
    """Rows ``p_0 .. p_n`` and cumulatives ``F_1 .. F_{n+1}`` of the n-th event time."""
    rows = [survival_values.copy()]
    cdf = np.clip(1.0 - survival_values, 0.0, 1.0)
    cdfs = [cdf]
    limit = N_MAX_CAP if n_max is None else n_max
    total = rows[0].copy()
    while len(rows) <= limit:
        if n_max is None and np.min(total) > 1.0 - COUNT_TARGET:
            break
        p = np.clip(_stieltjes(np.diff(cdf), survival_values), 0.0, None)
        p = np.minimum(p, cdf)
        rows.append(p)
        total += p
        cdf = np.clip(cdf - p, 0.0, 1.0)
        cdfs.append(cdf)
    shortfall = 1.0 - np.min(total)
    if shortfall > COUNT_WARN:
        warnings.warn(
            f"event-count probabilities truncated at n={len(rows) - 1} miss {shortfall:.2e} of the mass",
            TruncationWarning,
            stacklevel=3,
        )
    return np.array(rows), cdfs


def event_count_table(w: WaitingTime, grid: TimeGrid, n_max: int | None = None) -> np.ndarray:
    """``p_n(tau_k)`` as an array of shape ``(n_max + 1, grid.count)``."""
    if n_max is not None and n_max < 0:
        raise ValueError(f"n_max must be non-negative, got {n_max}")
    surv = np.clip(np.asarray(w.survival(grid.values), dtype=float), 0.0, 1.0)
    rows, _ = _count_rows(surv, n_max)
    return rows


def event_count_probs(
    w: WaitingTime, tau: float, n_max: int | None = None, step: float = 0.01
) -> np.ndarray:
    """Probabilities ``p_0(tau) .. p_{n_max}(tau)`` of exactly ``n`` events in ``(0, tau)``."""
    grid = TimeGrid.spanning(tau, step)
    return event_count_table(w, grid, n_max)[:, -1]


def two_time_event_table(
    w: WaitingTime,
    grid: TimeGrid,
    t: float,
    m_max: int | None = None,
    n_max: int | None = None,
) -> np.ndarray:
    """``P(tau_k, m; t, n)``: ``n`` events in ``(0, t)`` and ``m`` in ``(t, t + tau_k)``.

    Returns:
        Array of shape ``(m_max + 1, n_max + 1, grid.count)``.
    """
    a = TimeGrid.spanning(t, grid.step).count - 1
    M = grid.count
    ext = grid.with_count(M + a)
    surv = np.clip(np.asarray(w.survival(ext.values), dtype=float), 0.0, 1.0)

    if n_max is None:
        n_rows, _ = _count_rows(surv[: a + 1], None)
        n_max = n_rows.shape[0] - 1
    if m_max is None:
        m_rows, _ = _count_rows(surv, None)
        m_max = m_rows.shape[0] - 1
    rows, cdfs = _count_rows(surv, max(m_max, n_max))

    survivors = np.zeros((n_max + 1, M))
    survivors[0] = surv[a : a + M]
    for n in range(1, n_max + 1):
        if a == 0:
            break
        increments = np.diff(cdfs[n - 1][: a + 1])
        G = signal.fftconvolve(surv, increments)
        survivors[n] = 0.5 * (G[a : a + M] + G[a - 1 : a + M - 1])

    table = np.zeros((m_max + 1, n_max + 1, M))
    table[0] = survivors
    if m_max == 0:
        return np.clip(table, 0.0, None)
    drops = np.zeros_like(survivors)
    drops[:, :-1] = survivors[:, :-1] - survivors[:, 1:]
    nfft = sfft.next_fast_len(2 * M)
    drop_hat = sfft.rfft(drops, nfft, axis=-1)
    count_hat = sfft.rfft(rows[:m_max, :M], nfft, axis=-1)
    for m in range(1, m_max + 1):
        g = rows[m - 1, :M]
        full = sfft.irfft(drop_hat * count_hat[m - 1], nfft, axis=-1)[:, :M]
        out = 0.5 * (full - drops * g[0])
        out[:, 1:] += 0.5 * full[:, :-1]
        out[:, 0] = 0.0
        table[m] = out
    return np.clip(table, 0.0, None)


def two_time_event_probs(
    w: WaitingTime,
    tau: float,
    t: float,
    m_max: int | None = None,
    n_max: int | None = None,
    step: float = 0.01,
) -> np.ndarray:
    """Matrix ``P(tau, m; t, n)`` indexed ``[m, n]``."""
    grid = TimeGrid.spanning(tau, step)
    table = two_time_event_table(w, grid, t, m_max, n_max)
    total = table[:, :, -1].sum()
    if 1.0 - total > COUNT_WARN:
        warnings.warn(
            f"two-time event probabilities miss {1.0 - total:.2e} of the mass",
            TruncationWarning,
            stacklevel=2,
        )
    return table[:, :, -1]
