"""Renewal-event trajectories of the system state and their ensemble statistics.

Each realization draws its event times from the model's waiting time, evolves
unitarily between events and applies the Kraus channel at every event. The
ensemble engine works in the eigenbasis of ``H`` and in the interaction
picture, so the state only changes at events; observables are read off on the
output grid with exact phases.

Realizations are independent streams spawned from the master seed and are
reduced in fixed-size chunks in chunk order, which makes every result
bit-identical for any number of worker threads.
"""

from __future__ import annotations

import logging
import os
import threading
import warnings
from collections.abc import Callable, Iterator, Mapping
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import pandas as pd
from rich.progress import Progress
from scipy import linalg

from renewal_quantum.core.errors import (
    NumericalGuardError,
    RenewalWarning,
    StructuralError,
)
from renewal_quantum.core.numerics import TimeGrid
from renewal_quantum.core.qops import (
    DensityMatrix,
    Hamiltonian,
    KrausChannel,
    Observable,
    apply_channel,
    channel_map,
    channel_superoperator,
    dual_channel,
    event_generator,
    hamiltonian_superoperator,
    hermitian_parts,
    superoperator_commutator_norm,
    unitary_step,
    unvec,
    vec,
)
from renewal_quantum.core.renewal import (
    AgedRenewalTables,
    BiExponential,
    Exponential,
    WaitingTime,
    biexp_aged_survival,
    event_count_probs,
    event_count_table,
    two_time_event_table,
)

log = logging.getLogger(__name__)

CHUNK_SIZE = 256
EVENT_BLOCK = 32
MAX_EVENTS = 1_000_000
COMMUTATOR_TOL = 1e-10
REGRESSION_SIGMAS = 3.0
_SLICE_ELEMENTS = 1 << 22


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Model:
    """Hamiltonian, event channel and waiting time of a renewal-event model."""

    hamiltonian: Hamiltonian
    channel: KrausChannel
    waiting: WaitingTime

    def __post_init__(self):
        if self.hamiltonian.dim != self.channel.dim:
            raise StructuralError(
                f"Hamiltonian dimension {self.hamiltonian.dim} does not match "
                f"channel dimension {self.channel.dim}"
            )
        self.channel.require_valid()

    @property
    def dim(self) -> int:
        return self.channel.dim

    @cached_property
    def commutator_norm(self) -> float:
        """Norm of ``[L_S, E]`` as superoperators."""
        return superoperator_commutator_norm(
            hamiltonian_superoperator(self.hamiltonian), channel_superoperator(self.channel)
        )

    @property
    def is_commuting(self) -> bool:
        return self.commutator_norm < COMMUTATOR_TOL

    def require_commuting(self) -> None:
        if not self.is_commuting:
            raise NumericalGuardError(
                f"event channel and unitary flow do not commute "
                f"(norm {self.commutator_norm:.3e} >= {COMMUTATOR_TOL:.0e}); "
                "the event-counting route needs a commuting model"
            )


@dataclass(frozen=True)
class Preparation:
    """State replacement at the observation age; the event clock keeps running."""

    target: DensityMatrix | None = None
    mode: str = "none"

    def __post_init__(self):
        if self.mode not in ("none", "at-age"):
            raise ValueError(f"preparation mode must be 'none' or 'at-age', got {self.mode!r}")
        if self.mode == "at-age" and self.target is None:
            raise ValueError("preparation at age needs a target state")

    @property
    def active(self) -> bool:
        return self.mode == "at-age"


@dataclass(frozen=True)
class EnsembleResult:
    """Monte Carlo means and standard errors on ``age + grid``."""

    grid: TimeGrid
    names: tuple
    mean: np.ndarray
    stderr: np.ndarray
    realizations: int
    seed: int
    age: float = 0.0

    def __post_init__(self):
        shape = (len(self.names), self.grid.count)
        if self.mean.shape != shape or self.stderr.shape != shape:
            raise StructuralError(f"ensemble arrays must have shape {shape}")
        if np.any(self.stderr < 0):
            raise ValueError("standard errors must be non-negative")

    def curve(self, name: str) -> np.ndarray:
        return self.mean[self.names.index(name)]

    def error(self, name: str) -> np.ndarray:
        return self.stderr[self.names.index(name)]

    def to_frame(self) -> pd.DataFrame:
        """Columns ``tau``, ``mean[name]`` ..., ``stderr[name]`` ..."""
        data = {"tau": self.grid.values}
        for name, row in zip(self.names, self.mean):
            data[f"mean[{name}]"] = row
        for name, row in zip(self.names, self.stderr):
            data[f"stderr[{name}]"] = row
        return pd.DataFrame(data)


# ---------------------------------------------------------------------------
# Streams and reduction
# ---------------------------------------------------------------------------


def realization_rng(seed: int, index: int) -> np.random.Generator:
    """Independent generator of realization ``index`` under the master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def event_times(waiting: WaitingTime, rng: np.random.Generator, until: float) -> np.ndarray:
    """Ordered event times in ``(0, until]``, drawn in fixed-size blocks."""
    blocks = []
    last = 0.0
    drawn = 0
    while last <= until:
        block = last + np.cumsum(np.asarray(waiting.sample(rng, EVENT_BLOCK), dtype=float))
        blocks.append(block)
        last = block[-1]
        drawn += EVENT_BLOCK
        if drawn > MAX_EVENTS:
            raise NumericalGuardError(f"more than {MAX_EVENTS} events before t = {until}")
    times = np.concatenate(blocks)
    return times[times <= until]


def default_threads() -> int:
    return min(32, os.cpu_count() or 1)


_progress: ContextVar[Progress | None] = ContextVar("ensemble_progress", default=None)


@contextmanager
def ensemble_progress(progress: Progress) -> Iterator[Progress]:
    """Report chunk completion of every ensemble run inside the block to *progress*."""
    token = _progress.set(progress)
    try:
        yield progress
    finally:
        _progress.reset(token)


def current_progress() -> Progress | None:
    return _progress.get()


def run_ensemble(
    chunk_fn: Callable[[int, int], np.ndarray],
    realizations: int,
    threads: int | None = None,
    chunk_size: int = CHUNK_SIZE,
) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard error of per-realization values.

    Args:
        chunk_fn: Maps a realization range ``[start, stop)`` to an array of
            shape ``(stop - start, ...)`` of real values.
        realizations: Ensemble size.
        threads: Worker cap; does not change the result.
        chunk_size: Realizations per chunk.

    Returns:
        ``(mean, stderr)`` with the trailing shape of the chunk values.
    """
    if realizations < 1:
        raise ValueError(f"need at least one realization, got {realizations}")
    bounds = [(s, min(s + chunk_size, realizations)) for s in range(0, realizations, chunk_size)]
    workers = max(1, threads or default_threads())
    log.debug("ensemble: %d realizations, %d chunks, %d threads", realizations, len(bounds), workers)

    def reduce(bound):
        values = chunk_fn(*bound)
        return values.sum(axis=0), np.square(values).sum(axis=0)

    progress = current_progress()
    task = None if progress is None else progress.add_task(f"{realizations} realizations", total=len(bounds))
    partials = []
    with ThreadPoolExecutor(max_workers=workers) as pool:
        # map yields in chunk order, so the reduction below stays deterministic
        for partial in pool.map(reduce, bounds):
            partials.append(partial)
            if task is not None:
                progress.advance(task)
    if task is not None:
        progress.update(task, visible=False)

    total = np.zeros_like(partials[0][0])
    squares = np.zeros_like(partials[0][1])
    for part_sum, part_sq in partials:
        total += part_sum
        squares += part_sq
    n = realizations
    mean = total / n
    if n == 1:
        return mean, np.zeros_like(mean)
    var = np.maximum(squares - n * mean**2, 0.0) / (n - 1)
    return mean, np.sqrt(var / n)


# ---------------------------------------------------------------------------
# Eigenframe engine
# ---------------------------------------------------------------------------


class _Eigenframe:
    """Operators in the eigenbasis of ``H``; interaction picture helpers."""

    def __init__(self, model: Model):
        self.model = model
        self.energies, self.vectors = model.hamiltonian.spectrum
        self.freq = self.energies[:, None] - self.energies[None, :]
        self.trivial = model.hamiltonian.is_trivial
        self.kraus = np.array([self.to_eigen(op) for op in model.channel.operators])

    def to_eigen(self, matrix: np.ndarray) -> np.ndarray:
        return self.vectors.conj().T @ matrix @ self.vectors

    def from_eigen(self, matrix: np.ndarray) -> np.ndarray:
        return self.vectors @ matrix @ self.vectors.conj().T

    def rotate(self, matrix: np.ndarray, t) -> np.ndarray:
        """``U(t)^dagger M U(t)`` for eigenbasis matrices; ``t`` may be an array."""
        if self.trivial:
            return matrix
        t = np.asarray(t, dtype=float)
        phase = np.exp(1j * self.freq * t[..., None, None])
        if t.ndim == 0:
            return matrix * phase
        extra = matrix.ndim - 3
        return matrix * phase.reshape(phase.shape[:1] + (1,) * extra + phase.shape[1:])

    def apply_event(self, states: np.ndarray, times: np.ndarray) -> np.ndarray:
        """Interaction-picture channel at the given event times; ``states`` is ``(R, B, d, d)``."""
        lab = self.rotate(states, -times)
        out = np.einsum("iab,rxbc,idc->rxad", self.kraus, lab, self.kraus.conj())
        return self.rotate(out, times)

    def record(self, states: np.ndarray, counts: np.ndarray, observables: np.ndarray, times: np.ndarray) -> np.ndarray:
        """``Tr(rho A)`` for every realization, batch member, observable and grid time.

        Args:
            states: ``(R, E + 1, B, d, d)`` chain of interaction-picture states.
            counts: ``(R, M)`` number of applied events at each grid time.
            observables: ``(O, d, d)`` eigenbasis observables.
            times: ``(M,)`` absolute grid times.

        Returns:
            Complex array ``(R, B, O, M)``.
        """
        coeff = np.einsum("rexcd,odc->rexocd", states, observables)
        rows = np.arange(states.shape[0])[:, None]
        if self.trivial:
            reduced = coeff.sum(axis=(-1, -2))
            return np.moveaxis(reduced[rows, counts], 1, -1)
        R, _, B, O, d, _ = coeff.shape
        M = times.size
        out = np.empty((R, B, O, M), dtype=complex)
        step = max(1, _SLICE_ELEMENTS // (R * B * O * d * d))
        for lo in range(0, M, step):
            ks = slice(lo, min(lo + step, M))
            phase = np.exp(-1j * self.freq[None] * times[ks, None, None])
            picked = coeff[rows, counts[:, ks]]
            out[..., ks] = np.einsum("rkxocd,kcd->rxok", picked, phase)
        return out


def padded_event_times(times: list[np.ndarray]) -> np.ndarray:
    width = max((t.size for t in times), default=0)
    out = np.full((len(times), width), np.inf)
    for row, t in zip(out, times):
        row[: t.size] = t
    return out


def _state_chunk(
    frame: _Eigenframe,
    initial: np.ndarray,
    prepared: bool,
    age: float,
    record_times: np.ndarray,
    observables: np.ndarray,
    seed: int,
    start: int,
    stop: int,
) -> np.ndarray:
    until = record_times[-1]
    times = []
    for index in range(start, stop):
        t = event_times(frame.model.waiting, realization_rng(seed, index), until)
        times.append(t[t > age] if prepared else t)
    padded = padded_event_times(times)
    R, E = padded.shape
    states = np.empty((R, E + 1) + initial.shape, dtype=complex)
    states[:, 0] = initial
    for e in range(E):
        current = states[:, e]
        valid = np.isfinite(padded[:, e])
        nxt = current.copy()
        if valid.any():
            nxt[valid] = frame.apply_event(current[valid], padded[valid, e])
        states[:, e + 1] = nxt
    counts = np.stack([np.searchsorted(row, record_times, side="right") for row in padded])
    return frame.record(states, counts, observables, record_times)


def _initial_batch(frame: _Eigenframe, matrices, prepared: bool, age: float) -> np.ndarray:
    batch = np.array([frame.to_eigen(np.asarray(m, dtype=complex)) for m in matrices])
    return frame.rotate(batch, age) if prepared else batch


def _propagate_expectations(
    model: Model,
    matrices,
    prepared: bool,
    age: float,
    grid: TimeGrid,
    observables: Mapping[str, Observable],
    realizations: int,
    seed: int,
    threads: int | None,
) -> tuple[np.ndarray, np.ndarray]:
    """Ensemble ``Tr(A Phi(X))`` for a batch of (not necessarily positive) matrices ``X``."""
    frame = _Eigenframe(model)
    for name, obs in observables.items():
        if obs.dim != model.dim:
            raise StructuralError(f"observable {name!r} has dimension {obs.dim}, expected {model.dim}")
    initial = _initial_batch(frame, matrices, prepared, age)
    obs = np.array([frame.to_eigen(o.matrix) for o in observables.values()])
    record_times = age + grid.values

    def chunk(start, stop):
        values = _state_chunk(frame, initial, prepared, age, record_times, obs, seed, start, stop)
        return values.real

    return run_ensemble(chunk, realizations, threads)


# ---------------------------------------------------------------------------
# Ensemble simulation
# ---------------------------------------------------------------------------


def simulate_ensemble(
    model: Model,
    prep: Preparation,
    rho0: DensityMatrix,
    age: float,
    grid: TimeGrid,
    observables: Mapping[str, Observable],
    realizations: int,
    seed: int,
    threads: int | None = None,
    target_stderr: float | None = None,
) -> EnsembleResult:
    """Average observables over renewal-event realizations.

    Each realization starts from ``rho0`` at time zero. With an active
    preparation the state is replaced by the target at ``age`` while the
    event clock keeps its elapsed time since the last event. Observables are
    recorded at ``age + grid``.

    Raises:
        StructuralError: If dimensions disagree.
        ValueError: If ``realizations < 1`` or ``age < 0``.
    """
    if age < 0:
        raise ValueError(f"age must be non-negative, got {age}")
    if rho0.dim != model.dim:
        raise StructuralError(f"initial state has dimension {rho0.dim}, expected {model.dim}")
    start = prep.target if prep.active else rho0
    if start.dim != model.dim:
        raise StructuralError(f"preparation target has dimension {start.dim}, expected {model.dim}")
    log.info(
        "simulating %d realizations (age %g, span %g, %s preparation)",
        realizations, age, grid.span, prep.mode,
    )
    mean, stderr = _propagate_expectations(
        model, [start.entries], prep.active, age, grid, observables, realizations, seed, threads
    )
    result = EnsembleResult(grid, tuple(observables), mean[0], stderr[0], realizations, seed, age)
    if target_stderr is not None and np.max(result.stderr) > target_stderr:
        warnings.warn(
            f"{realizations} realizations leave a standard error of {np.max(result.stderr):.2e} "
            f"above the requested {target_stderr:.2e}",
            RenewalWarning,
            stacklevel=2,
        )
    return result


def simulate_trajectory(
    model: Model,
    prep: Preparation,
    rho0: DensityMatrix,
    age: float,
    grid: TimeGrid,
    seed: int,
    index: int = 0,
) -> list[DensityMatrix]:
    """One realization stepped explicitly with :func:`unitary_step` and :func:`apply_channel`.

    Uses the same random stream as realization ``index`` of
    :func:`simulate_ensemble`; every returned state is a validated
    :class:`DensityMatrix`.
    """
    record = age + grid.values
    times = event_times(model.waiting, realization_rng(seed, index), record[-1])
    state, clock = rho0, 0.0
    pending = prep.active
    out = []
    k = 0
    for s in record:
        while k < times.size and times[k] <= s:
            if pending and age < times[k]:
                state = unitary_step(model.hamiltonian, state, age - clock)
                state, clock, pending = prep.target, age, False
            state = unitary_step(model.hamiltonian, state, times[k] - clock)
            state = apply_channel(model.channel, state)
            clock = times[k]
            k += 1
        if pending and age <= s:
            state = unitary_step(model.hamiltonian, state, age - clock)
            state, clock, pending = prep.target, age, False
        state = unitary_step(model.hamiltonian, state, s - clock)
        clock = s
        out.append(state)
    return out


# ---------------------------------------------------------------------------
# Event-counting oracle
# ---------------------------------------------------------------------------


def _channel_powers(channel: KrausChannel, matrix: np.ndarray, count: int, dual: bool = False) -> list:
    step = dual_channel if dual else channel_map
    out = [np.asarray(matrix, dtype=complex)]
    for _ in range(count):
        out.append(step(channel, out[-1]))
    return out


def _aged_state(model: Model, rho0: DensityMatrix, age: float, step: float) -> np.ndarray:
    """Interaction-picture ``rho_S(t) = sum_n p_n(t) E^n[rho0]`` for a commuting model."""
    if age == 0:
        return rho0.entries.astype(complex)
    probs = event_count_probs(model.waiting, age, step=step)
    powers = _channel_powers(model.channel, rho0.entries, probs.size - 1)
    state = sum(p * m for p, m in zip(probs, powers))
    return state / probs.sum()


def semi_analytic_state(
    model: Model,
    rho0: DensityMatrix,
    age: float,
    tau: float,
    m_max: int | None = None,
    n_max: int | None = None,
    prep: Preparation | None = None,
    step: float = 0.01,
) -> DensityMatrix:
    """State at ``age + tau`` from two-time event-count probabilities.

    Raises:
        NumericalGuardError: If the channel and the unitary flow do not commute.
    """
    model.require_commuting()
    grid = TimeGrid.spanning(tau, step)
    table = two_time_event_table(model.waiting, grid, age, m_max, n_max)[:, :, -1]
    frame = _Eigenframe(model)
    if prep is not None and prep.active:
        weights = table.sum(axis=1)
        start = frame.from_eigen(frame.rotate(frame.to_eigen(prep.target.entries), age))
        powers = _channel_powers(model.channel, start, weights.size - 1)
        inner = sum(p * m for p, m in zip(weights, powers))
        total = weights.sum()
    else:
        m_top, n_top = table.shape[0] - 1, table.shape[1] - 1
        powers = _channel_powers(model.channel, rho0.entries, m_top + n_top)
        inner = sum(table[m, n] * powers[m + n] for m in range(m_top + 1) for n in range(n_top + 1))
        total = table.sum()
    inner = inner / total
    lab = frame.from_eigen(frame.rotate(frame.to_eigen(inner), -(age + tau)))
    return DensityMatrix((lab + lab.conj().T) / 2)


def semi_analytic_expectation(
    model: Model,
    rho0: DensityMatrix,
    observables: Mapping[str, Observable],
    age: float,
    grid: TimeGrid,
    prep: Preparation | None = None,
    m_max: int | None = None,
    n_max: int | None = None,
) -> np.ndarray:
    """Oracle expectation curves, shape ``(len(observables), grid.count)``."""
    model.require_commuting()
    frame = _Eigenframe(model)
    table = two_time_event_table(model.waiting, grid, age, m_max, n_max)
    prepared = prep is not None and prep.active
    if prepared:
        weights = table.sum(axis=1)
        start = frame.rotate(frame.to_eigen(prep.target.entries), age)
    else:
        m_top, n_top = table.shape[0] - 1, table.shape[1] - 1
        weights = np.zeros((m_top + n_top + 1, grid.count))
        for m in range(m_top + 1):
            weights[m : m + n_top + 1] += table[m]
        start = frame.to_eigen(rho0.entries)
    norm = weights.sum(axis=0)
    powers = np.array(_channel_powers(_eigen_channel(frame), start, weights.shape[0] - 1))
    times = age + grid.values
    phase = np.exp(-1j * frame.freq[None] * times[:, None, None])
    out = []
    for obs in observables.values():
        a = frame.to_eigen(obs.matrix)
        coeff = np.einsum("jcd,dc->jcd", powers, a)
        values = np.einsum("jcd,kcd->jk", coeff, phase)
        out.append(np.sum(weights * values, axis=0).real / norm)
    return np.array(out)


def renewal_propagated_trace(
    model: Model,
    matrix: np.ndarray,
    observable: Observable,
    grid: TimeGrid,
    n_max: int | None = None,
) -> np.ndarray:
    """``Tr[A G(s) X]`` after an event at ``s = 0``, for every grid ``s`` (complex).

    ``G(s) = sum_n p_n(s) U(s) E^n U(s)^dagger`` restarts the event clock, so
    the counts are those of a fresh renewal process.

    Raises:
        NumericalGuardError: If the model does not commute.
        StructuralError: On dimension mismatch.
    """
    model.require_commuting()
    matrix = np.asarray(matrix, dtype=complex)
    if matrix.shape != (model.dim, model.dim) or observable.dim != model.dim:
        raise StructuralError(f"operands must have dimension {model.dim}")
    frame = _Eigenframe(model)
    counts = event_count_table(model.waiting, grid, n_max)
    powers = np.array(_channel_powers(_eigen_channel(frame), frame.to_eigen(matrix), counts.shape[0] - 1))
    a = frame.to_eigen(observable.matrix)
    phase = np.exp(-1j * frame.freq[None] * grid.values[:, None, None])
    values = np.einsum("jcd,dc,kcd->jk", powers, a, phase)
    return np.sum(counts * values, axis=0) / counts.sum(axis=0)


def _eigen_channel(frame: _Eigenframe) -> KrausChannel:
    return KrausChannel(tuple(frame.kraus))


class _CorrelationTables:
    """Lazily grown ``G[n, m]`` coefficients of the per-trajectory correlation."""

    def __init__(self, frame: _Eigenframe, rho0: DensityMatrix, first, second, sandwich, age: float):
        self.frame = frame
        self.channel = _eigen_channel(frame)
        self.age = age
        eye = np.eye(frame.model.dim)
        self.first = frame.rotate(frame.to_eigen(first), age)
        self.sandwich = frame.rotate(frame.to_eigen(eye if sandwich is None else sandwich), age)
        self.states = [frame.to_eigen(rho0.entries).astype(complex)]
        self.duals = [frame.to_eigen(second).astype(complex)]
        self.table = np.zeros((0, 0) + eye.shape, dtype=complex)
        self._lock = threading.Lock()

    def ensure(self, n_top: int, m_top: int) -> np.ndarray:
        with self._lock:
            if self.table.shape[0] > n_top and self.table.shape[1] > m_top:
                return self.table
            n_top = max(n_top, self.table.shape[0] - 1)
            m_top = max(m_top, self.table.shape[1] - 1)
            while len(self.states) <= n_top:
                self.states.append(channel_map(self.channel, self.states[-1]))
            while len(self.duals) <= m_top:
                self.duals.append(dual_channel(self.channel, self.duals[-1]))
            outer = np.array([(self.sandwich @ p @ self.first).T for p in self.states[: n_top + 1]])
            duals = np.array(self.duals[: m_top + 1])
            drift = np.exp(1j * self.frame.freq * self.age)
            self.table = outer[:, None] * duals[None] * drift
            return self.table


def _evaluate_correlation(table: np.ndarray, n: np.ndarray, m: np.ndarray, frame: _Eigenframe, taus: np.ndarray) -> np.ndarray:
    if frame.trivial:
        return table.sum(axis=(-1, -2))[n[:, None], m]
    R, M = m.shape
    d = frame.model.dim
    out = np.empty((R, M), dtype=complex)
    step = max(1, _SLICE_ELEMENTS // (R * d * d))
    for lo in range(0, M, step):
        ks = slice(lo, min(lo + step, M))
        phase = np.exp(1j * frame.freq[None] * taus[ks, None, None])
        out[:, ks] = np.einsum("rkcd,kcd->rk", table[n[:, None], m[:, ks]], phase)
    return out


def correlate(
    model: Model,
    rho0: DensityMatrix,
    first: Observable,
    second: Observable,
    age: float,
    grid: TimeGrid,
    realizations: int,
    seed: int,
    sandwich: Observable | None = None,
    threads: int | None = None,
) -> EnsembleResult:
    """Monte Carlo two-time correlation ``Tr[rho O(t) A(t + tau) O~(t)]``.

    Per realization with ``n`` events in ``(0, t]`` and ``m`` in
    ``(t, t + tau]`` the value ``Tr{E^n[rho0] O (E#)^m[A] O~}`` is evaluated
    in the interaction picture. The result has rows ``re`` and ``im``.

    Raises:
        NumericalGuardError: If the model does not commute.
    """
    model.require_commuting()
    frame = _Eigenframe(model)
    tables = _CorrelationTables(
        frame, rho0, first.matrix, second.matrix, None if sandwich is None else sandwich.matrix, age
    )
    end = age + grid.span
    stops = age + grid.values

    def chunk(start, stop):
        n, m = [], []
        for index in range(start, stop):
            times = event_times(model.waiting, realization_rng(seed, index), end)
            before = np.searchsorted(times, age, side="right")
            n.append(before)
            m.append(np.searchsorted(times, stops, side="right") - before)
        n, m = np.array(n), np.array(m)
        table = tables.ensure(int(n.max()), int(m.max()))
        values = _evaluate_correlation(table, n, m, frame, grid.values)
        return np.stack([values.real, values.imag], axis=1)

    log.info("correlating %d realizations at age %g", realizations, age)
    mean, stderr = run_ensemble(chunk, realizations, threads)
    return EnsembleResult(grid, ("re", "im"), mean, stderr, realizations, seed, age)


def correlate_semi_analytic(
    model: Model,
    rho0: DensityMatrix,
    first: Observable,
    second: Observable,
    age: float,
    grid: TimeGrid,
    sandwich: Observable | None = None,
    m_max: int | None = None,
    n_max: int | None = None,
) -> np.ndarray:
    """Oracle correlation curve ``sum_{m,n} P(tau, m; t, n) G[n, m](tau)`` (complex)."""
    model.require_commuting()
    frame = _Eigenframe(model)
    probs = two_time_event_table(model.waiting, grid, age, m_max, n_max)
    tables = _CorrelationTables(
        frame, rho0, first.matrix, second.matrix, None if sandwich is None else sandwich.matrix, age
    )
    table = tables.ensure(probs.shape[1] - 1, probs.shape[0] - 1)
    phase = np.exp(1j * frame.freq[None] * grid.values[:, None, None])
    per_pair = np.einsum("nmcd,kcd->mnk", table, phase)
    return np.sum(probs * per_pair, axis=(0, 1)) / probs.sum(axis=(0, 1))


def parity_decay(w: WaitingTime, age: float, grid: TimeGrid) -> np.ndarray:
    """``sum_m (-1)**m sum_n P(tau, m; t, n)``: coherence under sign-flip events."""
    probs = two_time_event_table(w, grid, age).sum(axis=1)
    signs = (-1.0) ** np.arange(probs.shape[0])
    return signs @ probs


def dephasing_coherence_curve(w: WaitingTime, age: float, grid: TimeGrid) -> np.ndarray:
    """Aged survival ``P0~(tau, t)`` on the grid; ``age = inf`` gives the stationary curve.

    Raises:
        ValueError: For an infinite age without a stationary limit.
    """
    if np.isinf(age):
        if isinstance(w, BiExponential):
            return np.asarray(biexp_aged_survival(w, grid.values, np.inf))
        if isinstance(w, Exponential):
            return np.exp(-w.rate * grid.values)
        raise ValueError(f"{type(w).__name__} waiting time has no stationary aged survival")
    tables = AgedRenewalTables(w, grid, age)
    return np.array(tables.at_age(age).survival.samples)


def dephasing_coherence(w: WaitingTime, age: float, tau: float, step: float = 0.01) -> float:
    """``S(tau) / S(0) = P0~(tau, t)`` for coherence-erasing events."""
    return float(dephasing_coherence_curve(w, age, TimeGrid.spanning(tau, step))[-1])


def markov_state(model: Model, rho0: DensityMatrix, tau: float) -> DensityMatrix:
    """Exact ``exp[tau (L_S + rate (E - 1))] rho0`` for an exponential waiting time.

    Raises:
        ValueError: If the waiting time is not exponential.
    """
    if not isinstance(model.waiting, Exponential):
        raise ValueError("markov_state needs an exponential waiting time")
    generator = hamiltonian_superoperator(model.hamiltonian) + model.waiting.rate * event_generator(model.channel)
    out = unvec(linalg.expm(tau * generator) @ vec(rho0.entries))
    return DensityMatrix((out + out.conj().T) / 2)


# ---------------------------------------------------------------------------
# Regression check
# ---------------------------------------------------------------------------


def regression_check(
    model: Model,
    rho0: DensityMatrix,
    first: Observable,
    second: Observable,
    age: float,
    grid: TimeGrid,
    realizations: int,
    seed: int,
    threads: int | None = None,
) -> dict:
    """Compare the correlation decay with the expectation decay after preparation.

    The expectation side prepares ``X = rho_S(t) O`` at age ``t`` (split into
    Hermitian parts and propagated by linearity) with the same master seed as
    the correlation side.

    Returns:
        dict with keys ``pass``, ``value`` (largest deviation in combined
        standard errors), ``threshold``, ``reason`` and ``curves`` (a
        DataFrame).

    Raises:
        NumericalGuardError: If the model does not commute or the equal-time
            correlation vanishes.
    """
    model.require_commuting()
    frame = _Eigenframe(model)
    corr = correlate(model, rho0, first, second, age, grid, realizations, seed, threads=threads)

    aged = _aged_state(model, rho0, age, grid.step)
    lab = frame.from_eigen(frame.rotate(frame.to_eigen(aged), -age))
    prepared = lab @ first.matrix
    norm = complex(np.trace(prepared @ second.matrix))
    if abs(norm) < 1e-12:
        raise NumericalGuardError("equal-time correlation vanishes; decay shapes are undefined")
    parts = hermitian_parts(prepared)
    mean, stderr = _propagate_expectations(
        model, parts, True, age, grid, {"A": second}, realizations, seed, threads
    )
    expect_re, expect_im = mean[0, 0], mean[1, 0]
    expect_re_err, expect_im_err = stderr[0, 0], stderr[1, 0]

    worst = 0.0
    within = np.ones(grid.count, dtype=bool)
    for c, ce, e, ee in (
        (corr.curve("re"), corr.error("re"), expect_re, expect_re_err),
        (corr.curve("im"), corr.error("im"), expect_im, expect_im_err),
    ):
        combined = np.hypot(ce, ee)
        gap = np.abs(c - e)
        ok = gap <= REGRESSION_SIGMAS * combined + 1e-9
        within &= ok
        z = np.where(combined > 0, gap / np.where(combined > 0, combined, 1.0), 0.0)
        worst = max(worst, float(np.max(z)))

    scale = abs(norm)
    normalized_corr = (corr.curve("re") + 1j * corr.curve("im")) / norm
    normalized_expect = (expect_re + 1j * expect_im) / norm
    curves = pd.DataFrame(
        {
            "t": np.full(grid.count, age),
            "tau": grid.values,
            "corr": normalized_corr.real,
            "corr_stderr": np.hypot(corr.error("re"), corr.error("im")) / scale,
            "expect": normalized_expect.real,
            "expect_stderr": np.hypot(expect_re_err, expect_im_err) / scale,
            "parity": parity_decay(model.waiting, age, grid),
            "Ptilde": dephasing_coherence_curve(model.waiting, age, grid),
            "within": within,
        }
    )
    passed = bool(np.all(within))
    return {
        "pass": passed,
        "value": worst,
        "threshold": REGRESSION_SIGMAS,
        "reason": (
            f"correlation and expectation decays agree at all {grid.count} points"
            if passed
            else f"{int(np.sum(~within))} of {grid.count} points differ by more than "
            f"{REGRESSION_SIGMAS:g} combined standard errors"
        ),
        "curves": curves,
    }
