"""Linear response of renewal-event dynamics to a weak periodic drive.

Two kinds of perturbation are supported:

* ``superoperator``: every event applies ``E + lam xi(T) O`` instead of ``E``,
  with ``O`` trace-annihilating. The response to first order is
  ``Tr[A G(tau - s) O rho_inf] f(s)`` integrated against the drive.
* ``event-time``: the drive shifts the event clock through a state-dependent
  operator ``O``. In the classical case where ``E O rho_inf`` is either
  ``rho_inf`` or zero, the response is the aged waiting time integrated
  against the drive.

Everything here assumes a commuting model started in its stationary state.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from renewal_quantum.core.errors import (
    InvalidStateError,
    NumericalGuardError,
    StructuralError,
)
from renewal_quantum.core.numerics import GridFunction, TimeGrid, convolve, stieltjes_convolve
from renewal_quantum.core.qops import (
    MAX_DIM,
    DensityMatrix,
    Observable,
    apply_superoperator,
    channel_superoperator,
    expect,
    pauli,
    vec,
)
from renewal_quantum.core.renewal import AgedRenewalTables, WaitingTime
from renewal_quantum.core.trajectories import (
    EnsembleResult,
    Model,
    event_times,
    realization_rng,
    renewal_propagated_trace,
    run_ensemble,
)

log = logging.getLogger(__name__)

DRIVE_KINDS = ("cos", "const", "zero")
PERTURBATION_KINDS = ("superoperator", "event-time")
FIXED_POINT_TOL = 1e-10
TRACELESS_TOL = 1e-10
POINTS_PER_PERIOD = 20
_INVARIANCE_TIMES = (0.37, 1.0, 3.1)


# ---------------------------------------------------------------------------
# Drive and perturbation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Drive:
    """Scalar drive ``xi(tau)``: ``amplitude cos(omega tau)``, a constant, or zero."""

    kind: str = "cos"
    omega: float = 0.0
    amplitude: float = 1.0

    def __post_init__(self):
        if self.kind not in DRIVE_KINDS:
            raise ValueError(f"drive kind must be one of {DRIVE_KINDS}, got {self.kind!r}")
        if not np.isfinite(self.omega) or self.omega < 0:
            raise ValueError(f"drive frequency must be finite and non-negative, got {self.omega}")

    def __call__(self, tau):
        t = np.asarray(tau, dtype=float)
        if self.kind == "cos":
            out = self.amplitude * np.cos(self.omega * t)
        elif self.kind == "const":
            out = np.full(t.shape, float(self.amplitude))
        else:
            out = np.zeros(t.shape)
        return float(out) if out.ndim == 0 else out

    def integral(self, start, stop):
        """``int_start^stop xi(s) ds`` in closed form."""
        a = np.asarray(start, dtype=float)
        b = np.asarray(stop, dtype=float)
        if self.kind == "zero":
            out = np.zeros(np.broadcast(a, b).shape)
        elif self.kind == "const" or self.omega == 0.0:
            out = self.amplitude * (b - a)
        else:
            out = self.amplitude * (np.sin(self.omega * b) - np.sin(self.omega * a)) / self.omega
        return float(out) if np.ndim(out) == 0 else out

    @property
    def bound(self) -> float:
        """``max |xi|``."""
        return 0.0 if self.kind == "zero" else abs(float(self.amplitude))


def drive(kind: str, omega: float = 0.0, amplitude: float = 1.0) -> Drive:
    return Drive(kind, float(omega), float(amplitude))


@dataclass(frozen=True)
class EventPerturbation:
    """Perturbation of strength ``lam`` with time profile ``xi`` and superoperator ``op``.

    Raises:
        ValueError: On an unknown kind, or ``|lam| max|xi| > 1`` for the
            superoperator kind.
        StructuralError: If ``op`` is not a ``d^2 x d^2`` matrix.
        InvalidStateError: If a superoperator-kind ``op`` does not annihilate traces.
    """

    kind: str
    lam: float
    xi: Drive
    op: np.ndarray

    def __post_init__(self):
        if self.kind not in PERTURBATION_KINDS:
            raise ValueError(f"perturbation kind must be one of {PERTURBATION_KINDS}, got {self.kind!r}")
        op = np.array(self.op, dtype=complex)
        size = op.shape[0] if op.ndim == 2 else 0
        d = int(round(np.sqrt(size)))
        if op.ndim != 2 or op.shape[0] != op.shape[1] or d * d != size or not 1 <= d <= MAX_DIM:
            raise StructuralError(f"perturbation operator must be a d^2 x d^2 matrix, got shape {op.shape}")
        if self.kind == "superoperator":
            leak = float(np.max(np.abs(vec(np.eye(d)) @ op)))
            if leak > TRACELESS_TOL:
                raise InvalidStateError(f"perturbation does not annihilate traces (deviation {leak:.3e})")
            if abs(self.lam) * self.xi.bound > 1.0:
                raise ValueError(f"|lambda| max|xi| = {abs(self.lam) * self.xi.bound:.4g} exceeds 1")
        op.setflags(write=False)
        object.__setattr__(self, "op", op)

    @property
    def dim(self) -> int:
        return int(round(np.sqrt(self.op.shape[0])))


def depolarizing_bias_perturbation(lam: float, xi: Drive) -> EventPerturbation:
    """``O[rho] = Tr(rho) sz / 2``: the event re-prepares ``(I + lam xi sz) / 2``."""
    op = np.outer(vec(pauli("sz") / 2), vec(np.eye(2)))
    return EventPerturbation("superoperator", lam, xi, op)


def classical_shift_perturbation(lam: float, xi: Drive) -> EventPerturbation:
    """``O[rho] = -sum_a a P_a rho P_a``: the drive delays or advances events by level."""
    up, down = np.diag([1.0, 0.0]), np.diag([0.0, 1.0])
    op = -(np.kron(up, up) - np.kron(down, down))
    return EventPerturbation("event-time", lam, xi, op)


# ---------------------------------------------------------------------------
# Stationary state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StationaryState:
    rho_inf: DensityMatrix


def stationary_state(model: Model) -> StationaryState:
    """Unique fixed point of the event channel, checked against the unitary flow.

    Raises:
        NumericalGuardError: If eigenvalue 1 of the channel map is not simple,
            or the fixed point is not invariant under the unitary flow.
    """
    superop = channel_superoperator(model.channel)
    d = model.dim
    kernel = linalg.null_space(superop - np.eye(d * d), rcond=1e-9)
    multiplicity = kernel.shape[1]
    if multiplicity != 1:
        raise NumericalGuardError(
            f"channel has an eigenvalue-1 multiplicity of {multiplicity}; the stationary state is not unique"
        )
    rho = kernel[:, 0].reshape(d, d)
    rho = rho / np.trace(rho)
    rho = (rho + rho.conj().T) / 2
    fixed = float(np.max(np.abs(apply_superoperator(superop, rho) - rho)))
    if fixed > FIXED_POINT_TOL:
        raise NumericalGuardError(f"fixed point residual {fixed:.3e} exceeds {FIXED_POINT_TOL:.0e}")
    for t in _INVARIANCE_TIMES:
        u = model.hamiltonian.propagator(t)
        drift = float(np.max(np.abs(u @ rho @ u.conj().T - rho)))
        if drift > FIXED_POINT_TOL:
            raise NumericalGuardError(
                f"fixed point of the channel is not invariant under the unitary flow "
                f"(drift {drift:.3e} at t = {t})"
            )
    return StationaryState(DensityMatrix(rho))


def _require_stationary(model: Model, rho0: DensityMatrix | None) -> DensityMatrix:
    rho_inf = stationary_state(model).rho_inf
    if rho0 is not None:
        gap = float(np.max(np.abs(rho0.entries - rho_inf.entries)))
        if gap > FIXED_POINT_TOL:
            raise NumericalGuardError(
                f"initial state differs from the stationary state by {gap:.3e}; "
                "the response formulas need a stationary start"
            )
    return rho_inf


# ---------------------------------------------------------------------------
# Perturbed event superoperator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EventResponseKernel:
    """``chi(tau, s) = g(tau - s) f(s, age)`` with ``g(u) = Tr[A G(u) O rho_inf]``."""

    perturbation: EventPerturbation
    propagated: GridFunction
    sprinkling: GridFunction
    baseline: float

    @property
    def grid(self) -> TimeGrid:
        return self.propagated.grid

    def table(self) -> np.ndarray:
        """Lower-triangular ``chi[k, j]``; column 0 is ``inf`` for a singular sprinkling density."""
        M = self.grid.count
        rows, cols = np.tril_indices(M)
        out = np.zeros((M, M))
        out[rows, cols] = self.propagated.samples[rows - cols] * self.sprinkling.samples[cols]
        return out

    def expectation(self, xi: Drive | None = None) -> np.ndarray:
        """First-order ``A(tau) = A_inf + lam int_0^tau chi(tau, s) xi(s) ds``."""
        xi = self.perturbation.xi if xi is None else xi
        f = self.sprinkling
        driven = f.samples * xi(self.grid.values)
        if f.is_singular:
            driven[0] = 0.0
        response = convolve(self.propagated, GridFunction(self.grid, driven, f.singular_exponent))
        return self.baseline + self.perturbation.lam * response.samples


def response_kernel_event(
    model: Model,
    pert: EventPerturbation,
    observable: Observable,
    grid: TimeGrid,
    age: float = 0.0,
    rho0: DensityMatrix | None = None,
) -> EventResponseKernel:
    """Response kernel of a perturbed event superoperator.

    Args:
        model: Commuting model; its channel must have a unique fixed point.
        pert: Superoperator-kind perturbation.
        observable: Measured observable ``A``.
        grid: Grid for both time arguments.
        age: Switch-on age; ``f(s, 0)`` becomes ``f(s, age)``.
        rho0: Optional initial state, which must be the stationary one.

    Raises:
        ValueError: For an event-time perturbation.
        NumericalGuardError: For a non-commuting model or a non-stationary start.
    """
    if pert.kind != "superoperator":
        raise ValueError("response_kernel_event needs a superoperator-kind perturbation")
    if pert.dim != model.dim:
        raise StructuralError(f"perturbation has dimension {pert.dim}, expected {model.dim}")
    model.require_commuting()
    rho_inf = _require_stationary(model, rho0)
    kicked = apply_superoperator(pert.op, rho_inf.entries)
    g = renewal_propagated_trace(model, kicked, observable, grid).real
    tables = AgedRenewalTables(model.waiting, grid, age)
    f = tables.at_age(age).sprinkling
    log.debug("event response kernel on %d points at age %g", grid.count, age)
    return EventResponseKernel(pert, GridFunction(grid, g), f, expect(rho_inf, observable))


def _require_resolved(grid: TimeGrid, *frequencies: float) -> None:
    top = max((abs(f) for f in frequencies), default=0.0)
    if top == 0.0:
        return
    per_period = 2 * np.pi / top / grid.step
    if per_period < POINTS_PER_PERIOD:
        raise NumericalGuardError(
            f"grid step {grid.step:g} gives {per_period:.1f} points per period; "
            f"at least {POINTS_PER_PERIOD} are needed"
        )


def sz_exact_depolarizing(
    w: WaitingTime,
    Omega: float,
    omega: float,
    lam: float,
    grid: TimeGrid,
    drive_kind: str = "cos",
) -> np.ndarray:
    """``S_Z(tau) = lam int_0^tau P0(tau - s) cos[Omega (tau - s)] f(s) xi(s) ds``.

    Exact at every order in ``lam`` for the biased depolarizing model under a
    Rabi Hamiltonian started from ``I/2``.

    Raises:
        NumericalGuardError: If the grid has fewer than 20 points per period.
    """
    _require_resolved(grid, Omega, omega)
    xi = drive(drive_kind, omega)
    t = grid.values
    surv = np.clip(np.asarray(w.survival(t), dtype=float), 0.0, 1.0)
    kernel = GridFunction(grid, surv * np.cos(Omega * t))
    f = w.sprinkling(grid)
    driven = f.samples * xi(t)
    if f.is_singular:
        driven[0] = 0.0
    return lam * convolve(kernel, GridFunction(grid, driven, f.singular_exponent)).samples


def simulate_perturbed_depolarizing(
    w: WaitingTime,
    Omega: float,
    omega: float,
    lam: float,
    grid: TimeGrid,
    realizations: int,
    seed: int,
    s0: float = 0.0,
    threads: int | None = None,
    drive_kind: str = "cos",
) -> EnsembleResult:
    """Monte Carlo ``S_Z`` from the scalar rule of the biased depolarizing model.

    Between events ``S`` precesses as ``cos[Omega (tau - T)] S(T)``; an event at
    ``T`` resets it to ``lam xi(T)``. Before the first event it is
    ``s0 cos(Omega tau)``.
    """
    xi = drive(drive_kind, omega)
    if abs(lam) * xi.bound > 1.0:
        raise ValueError(f"|lambda| max|xi| = {abs(lam) * xi.bound:.4g} exceeds 1")
    tau = grid.values

    def chunk(start, stop):
        out = np.empty((stop - start, 1, grid.count))
        for row, index in enumerate(range(start, stop)):
            times = event_times(w, realization_rng(seed, index), tau[-1])
            k = np.searchsorted(times, tau, side="right") - 1
            if times.size:
                last = np.where(k >= 0, times[np.maximum(k, 0)], 0.0)
            else:
                last = np.zeros(grid.count)
            amp = np.where(k >= 0, lam * xi(last), s0)
            out[row, 0] = amp * np.cos(Omega * (tau - last))
        return out

    log.info("perturbed depolarizing ensemble: %d realizations", realizations)
    mean, stderr = run_ensemble(chunk, realizations, threads)
    return EnsembleResult(grid, ("sz",), mean, stderr, realizations, seed)


# ---------------------------------------------------------------------------
# Perturbed event times
# ---------------------------------------------------------------------------


def _shifted_product(w: WaitingTime, xi: Drive, t: float, grid: TimeGrid) -> np.ndarray:
    tau = grid.values
    with np.errstate(divide="ignore", invalid="ignore"):
        dens = np.asarray(w.density(tau), dtype=float)
    shifted = xi.integral(t, t + tau)
    product = dens * shifted
    product[0] = 0.0
    return product


def perturbed_survival(
    w: WaitingTime, lam: float, xi: Drive, t: float, grid: TimeGrid, shift: float = 1.0
) -> np.ndarray:
    """First-order ``P0(tau | t) = P0(tau) - lam shift w(tau) int_t^{t+tau} xi``.

    Raises:
        NumericalGuardError: If the survival goes negative; the message names
            the first offending ``tau``.
    """
    product = _shifted_product(w, xi, t, grid)
    surv = np.asarray(w.survival(grid.values), dtype=float)
    out = surv - lam * shift * product
    bad = np.flatnonzero(out < -1e-12)
    if bad.size:
        raise NumericalGuardError(
            f"perturbed survival is negative at tau = {grid.values[bad[0]]:g}; lambda is too large"
        )
    return out


def perturbed_waiting_density(
    w: WaitingTime, lam: float, xi: Drive, t: float, grid: TimeGrid, shift: float = 1.0
) -> GridFunction:
    """First-order ``w(tau | t) = w(tau) + lam shift d/dtau[w(tau) int_t^{t+tau} xi]``.

    The correction is a total derivative of a function vanishing at both
    ends, so the normalization is unchanged.
    """
    base = AgedRenewalTables(w, grid).at_age(0.0).waiting
    product = _shifted_product(w, xi, t, grid)
    samples = np.array(base.samples)
    samples[1:] += lam * shift * np.gradient(product, grid.step, edge_order=2)[1:]
    if not base.is_singular:
        samples[0] += lam * shift * (product[1] - product[0]) / grid.step
    return GridFunction(grid, samples, base.singular_exponent)


def event_time_kernel_integral(w: WaitingTime, xi: Drive, grid: TimeGrid) -> np.ndarray:
    """``I(tau) = int_0^tau w~(tau - s, s) xi(s) ds``.

    With ``X(tau) = int_0^tau xi`` this equals
    ``X(tau) f(tau) - int_0^tau w(tau - s) f(s) X(s) ds``; the remaining
    integral is taken against the increments of ``1 - P0``.
    """
    tau = grid.values
    f = w.sprinkling(grid)
    accumulated = xi.integral(0.0, tau)
    weighted = f.samples * accumulated
    weighted[0] = 0.0
    cdf = GridFunction(grid, 1.0 - np.clip(np.asarray(w.survival(tau), dtype=float), 0.0, 1.0))
    history = stieltjes_convolve(cdf, GridFunction(grid, weighted))
    return weighted - history.samples


def response_event_time(
    w: WaitingTime,
    pert: EventPerturbation,
    model: Model,
    observable: Observable,
    grid: TimeGrid,
    experimental: bool = False,
) -> np.ndarray:
    """First-order expectation under an event-time perturbation.

    In the classical case ``E O rho_inf`` in ``{rho_inf, 0}`` the result is
    ``A_inf + lam Tr{A [E, O] rho_inf} I(tau)``. Otherwise the extra term
    ``lam int g'(tau - s) I(s) ds`` with ``g(u) = Tr[A G(u) E O rho_inf]`` is
    added when ``experimental`` is set.

    Raises:
        ValueError: For a superoperator-kind perturbation.
        NumericalGuardError: If the perturbed survival goes negative, or the
            classical condition fails without ``experimental``.
    """
    if pert.kind != "event-time":
        raise ValueError("response_event_time needs an event-time perturbation")
    if pert.dim != model.dim:
        raise StructuralError(f"perturbation has dimension {pert.dim}, expected {model.dim}")
    rho_inf = stationary_state(model).rho_inf
    strength = float(np.linalg.norm(pert.op, ord=2))
    perturbed_survival(w, abs(pert.lam), pert.xi, 0.0, grid, shift=strength)
    perturbed_survival(w, -abs(pert.lam), pert.xi, 0.0, grid, shift=strength)

    channel = channel_superoperator(model.channel)
    a = observable.matrix
    rho = rho_inf.entries
    commutator = channel @ pert.op - pert.op @ channel
    slope = float(np.trace(a @ apply_superoperator(commutator, rho)).real)
    kicked = apply_superoperator(channel @ pert.op, rho)
    classical = (
        np.max(np.abs(kicked - rho)) < FIXED_POINT_TOL or np.max(np.abs(kicked)) < FIXED_POINT_TOL
    )
    integral = event_time_kernel_integral(w, pert.xi, grid)
    out = expect(rho_inf, observable) + pert.lam * slope * integral
    if classical:
        return out
    if not experimental:
        raise NumericalGuardError(
            "E O rho_inf is neither rho_inf nor zero; the two-term response is only "
            "available with experimental=True"
        )
    log.warning("evaluating the two-term event-time response (experimental)")
    trace = renewal_propagated_trace(model, kicked, observable, grid).real
    slope_curve = GridFunction(grid, np.gradient(trace, grid.step, edge_order=2))
    return out + pert.lam * convolve(slope_curve, GridFunction(grid, integral)).samples


# ---------------------------------------------------------------------------
# Envelope analysis
# ---------------------------------------------------------------------------


def _window_peaks(grid: TimeGrid, values: np.ndarray, start: float, stop: float, window: float):
    if window <= 0 or stop <= start:
        raise ValueError("need window > 0 and stop > start")
    tau = grid.values
    magnitude = np.abs(np.asarray(values, dtype=float))
    peaks = []
    for lo in np.arange(start, stop - 0.5 * window, window):
        idx = np.flatnonzero((tau >= lo) & (tau < lo + window))
        if idx.size:
            peaks.append(idx[np.argmax(magnitude[idx])])
    if len(peaks) < 2:
        raise ValueError("fewer than two envelope windows between start and stop")
    return np.array(peaks), magnitude


def fit_envelope_exponent(
    grid: TimeGrid, values: np.ndarray, start: float, stop: float, window: float
) -> float:
    """Log-log slope of the per-window peaks of ``|values|`` on ``[start, stop)``."""
    peaks, magnitude = _window_peaks(grid, values, start, stop, window)
    slope, _ = np.polyfit(np.log(grid.values[peaks]), np.log(magnitude[peaks]), 1)
    return float(slope)


def envelope_ratios(
    grid: TimeGrid,
    values: np.ndarray,
    reference: np.ndarray,
    start: float,
    stop: float,
    window: float,
) -> np.ndarray:
    """Per-window peak of ``|values|`` over ``reference`` at the peak."""
    peaks, magnitude = _window_peaks(grid, values, start, stop, window)
    return magnitude[peaks] / np.asarray(reference, dtype=float)[peaks]


def envelope_constant(
    grid: TimeGrid,
    values: np.ndarray,
    reference: np.ndarray,
    start: float,
    stop: float,
    window: float,
) -> float:
    """Median :func:`envelope_ratios`: the ``c`` in ``|values| ~ c reference``."""
    return float(np.median(envelope_ratios(grid, values, reference, start, stop, window)))


def resonant_residual(w: WaitingTime, omega: float, lam: float, grid: TimeGrid, sz: np.ndarray) -> np.ndarray:
    """``S_Z(tau) - lam [1 - P0(tau)] cos(omega tau) / 2`` for a resonant drive."""
    tau = grid.values
    surv = np.asarray(w.survival(tau), dtype=float)
    return np.asarray(sz, dtype=float) - lam * (1.0 - surv) * np.cos(omega * tau) / 2
