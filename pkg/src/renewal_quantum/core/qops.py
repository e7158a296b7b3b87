"""Finite-dimensional state and channel algebra.

Density matrices, Kraus channels, Hamiltonians and observables are immutable
values validated on construction. Superoperators use row-major vectorization:
``vec(A X B) = kron(A, B.T) @ vec(X)`` with ``vec(X) = X.reshape(-1)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import linalg

from renewal_quantum.core.errors import InvalidStateError, StructuralError

MAX_DIM = 8

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
POSITIVITY_TOL = 1e-10
COMPLETENESS_TOL = 1e-10

# ---------------------------------------------------------------------------
# Matrix helpers
# ---------------------------------------------------------------------------


def _as_square(matrix, what: str) -> np.ndarray:
    arr = np.array(matrix, dtype=np.complex128)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise StructuralError(f"{what} must be a square matrix, got shape {arr.shape}")
    if not 1 <= arr.shape[0] <= MAX_DIM:
        raise StructuralError(f"{what} dimension {arr.shape[0]} outside 1..{MAX_DIM}")
    arr.setflags(write=False)
    return arr


def _require_hermitian(arr: np.ndarray, what: str) -> None:
    deviation = np.max(np.abs(arr - arr.conj().T))
    if deviation > HERMITIAN_TOL:
        raise InvalidStateError(f"{what} is not Hermitian (deviation {deviation:.3e})")


def matrix_from_pairs(rows) -> np.ndarray:
    """Build a complex matrix from row-major ``[re, im]`` pairs.

    Args:
        rows: Nested list ``rows[i][j] = [re, im]``.

    Returns:
        Complex ndarray of shape ``(len(rows), len(rows[0]))``.

    Raises:
        StructuralError: If the nesting is ragged or an entry is not a pair.
    """
    try:
        arr = np.array(rows, dtype=float)
    except (TypeError, ValueError) as exc:
        raise StructuralError(f"matrix entries must be numeric [re, im] pairs: {exc}") from exc
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise StructuralError(f"expected rows of [re, im] pairs, got shape {arr.shape}")
    return arr[..., 0] + 1j * arr[..., 1]


def vec(matrix: np.ndarray) -> np.ndarray:
    """Row-major vectorization of a square matrix."""
    return np.asarray(matrix).reshape(-1)


def unvec(vector: np.ndarray) -> np.ndarray:
    """Inverse of :func:`vec`."""
    dim = int(round(np.sqrt(vector.size)))
    return np.asarray(vector).reshape(dim, dim)


def hermitian_parts(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split ``X`` into Hermitian ``H1, H2`` with ``X = H1 + i H2``."""
    x = np.asarray(matrix, dtype=np.complex128)
    return (x + x.conj().T) / 2, (x - x.conj().T) / 2j


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DensityMatrix:
    """Hermitian, unit-trace, positive semidefinite system state."""

    entries: np.ndarray

    def __post_init__(self):
        arr = _as_square(self.entries, "density matrix")
        _require_hermitian(arr, "density matrix")
        trace = np.trace(arr)
        if abs(trace - 1.0) > TRACE_TOL:
            raise InvalidStateError(f"density matrix trace {trace.real:.15g} differs from 1")
        smallest = linalg.eigvalsh(arr)[0]
        if smallest < -POSITIVITY_TOL:
            raise InvalidStateError(f"density matrix has negative eigenvalue {smallest:.3e}")
        object.__setattr__(self, "entries", arr)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def maximally_mixed(cls, dim: int) -> "DensityMatrix":
        return cls(np.eye(dim) / dim)

    @classmethod
    def from_bloch(cls, x: float = 0.0, y: float = 0.0, z: float = 0.0) -> "DensityMatrix":
        """Qubit state ``(I + x sx + y sy + z sz) / 2``."""
        return cls((np.eye(2) + x * pauli("sx") + y * pauli("sy") + z * pauli("sz")) / 2)


@dataclass(frozen=True)
class KrausChannel:
    """Event superoperator ``E[rho] = sum_i C_i rho C_i^dagger``.

    Construction checks structure only; completeness is reported by
    :func:`validate_kraus` and enforced by the operations that need it.
    """

    operators: tuple

    def __post_init__(self):
        if len(self.operators) == 0:
            raise StructuralError("a Kraus channel needs at least one operator")
        ops = tuple(_as_square(op, "Kraus operator") for op in self.operators)
        dims = {op.shape[0] for op in ops}
        if len(dims) != 1:
            raise StructuralError(f"Kraus operators have mismatched dimensions {sorted(dims)}")
        object.__setattr__(self, "operators", ops)

    @property
    def dim(self) -> int:
        return self.operators[0].shape[0]

    @cached_property
    def completeness_deviation(self) -> float:
        total = sum(op.conj().T @ op for op in self.operators)
        return float(np.linalg.norm(total - np.eye(self.dim), ord=2))

    def require_valid(self) -> None:
        if self.completeness_deviation > COMPLETENESS_TOL:
            raise InvalidStateError(
                f"Kraus operators are not complete (deviation {self.completeness_deviation:.3e})"
            )


@dataclass(frozen=True)
class Hamiltonian:
    """Hermitian generator of the unitary flow between events (angular frequency units)."""

    matrix: np.ndarray

    def __post_init__(self):
        arr = _as_square(self.matrix, "Hamiltonian")
        _require_hermitian(arr, "Hamiltonian")
        object.__setattr__(self, "matrix", arr)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def spectrum(self) -> tuple[np.ndarray, np.ndarray]:
        """Eigenvalues and eigenvectors (columns) of ``H``."""
        energies, vectors = linalg.eigh(self.matrix)
        return energies, vectors

    @property
    def is_trivial(self) -> bool:
        energies, _ = self.spectrum
        return bool(np.ptp(energies) == 0.0)

    def propagator(self, dt: float) -> np.ndarray:
        """``U = exp(-i H dt)`` from the eigendecomposition."""
        energies, vectors = self.spectrum
        return (vectors * np.exp(-1j * energies * dt)) @ vectors.conj().T

    @classmethod
    def zero(cls, dim: int) -> "Hamiltonian":
        return cls(np.zeros((dim, dim)))


@dataclass(frozen=True)
class Observable:
    """Hermitian system operator."""

    matrix: np.ndarray

    def __post_init__(self):
        arr = _as_square(self.matrix, "observable")
        _require_hermitian(arr, "observable")
        object.__setattr__(self, "matrix", arr)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

_PAULI = {
    "id": np.eye(2, dtype=np.complex128),
    "sx": np.array([[0, 1], [1, 0]], dtype=np.complex128),
    "sy": np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    "sz": np.array([[1, 0], [0, -1]], dtype=np.complex128),
}


def pauli(name: str) -> np.ndarray:
    """Return a copy of the named Pauli matrix (``id``, ``sx``, ``sy``, ``sz``)."""
    try:
        return _PAULI[name].copy()
    except KeyError:
        raise ValueError(f"Unknown Pauli matrix '{name}'") from None


def dephasing_channel() -> KrausChannel:
    """Single Kraus operator ``sz``: flips the sign of the coherences."""
    return KrausChannel((pauli("sz"),))


def projective_dephasing_channel() -> KrausChannel:
    """Projectors on the ``sz`` basis: erases the coherences."""
    return KrausChannel((np.diag([1.0, 0.0]), np.diag([0.0, 1.0])))


def depolarizing_channel() -> KrausChannel:
    """Operators ``|a><b| / sqrt(2)``; maps every state to ``I/2``."""
    return perturbed_depolarizing_channel(0.0)


def perturbed_depolarizing_channel(lam_xi: float) -> KrausChannel:
    """Depolarizing event biased towards ``sz``: ``E[rho] = (I + lam_xi sz) / 2``.

    Args:
        lam_xi: Product of the perturbation strength and the drive at the event.

    Raises:
        ValueError: If ``|lam_xi| > 1`` (the map would not be positive).
    """
    if abs(lam_xi) > 1.0:
        raise ValueError(f"|lambda * xi| = {abs(lam_xi):.4g} exceeds 1")
    ops = []
    for a, sign in enumerate((1.0, -1.0)):
        weight = np.sqrt((1.0 + sign * lam_xi) / 2.0)
        for b in range(2):
            op = np.zeros((2, 2), dtype=np.complex128)
            op[a, b] = weight
            ops.append(op)
    return KrausChannel(tuple(ops))


def identity_channel(dim: int) -> KrausChannel:
    return KrausChannel((np.eye(dim),))


def rabi_hamiltonian(omega: float) -> Hamiltonian:
    """``H = Omega sx / 2``."""
    return Hamiltonian(omega * pauli("sx") / 2)


def precession_hamiltonian(omega_a: float) -> Hamiltonian:
    """``H = omega_A sz / 2``."""
    return Hamiltonian(omega_a * pauli("sz") / 2)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def validate_kraus(channel: KrausChannel) -> dict:
    """Check the completeness relation ``sum C_i^dagger C_i = I``.

    Args:
        channel: Channel to check. Dimension mismatches are rejected when the
            channel is constructed.

    Returns:
        dict with keys ``pass``, ``value`` (spectral-norm deviation),
        ``threshold`` and ``reason``.
    """
    deviation = channel.completeness_deviation
    passed = deviation <= COMPLETENESS_TOL
    return {
        "pass": passed,
        "value": deviation,
        "threshold": COMPLETENESS_TOL,
        "reason": (
            "Kraus operators are complete"
            if passed
            else f"completeness deviation {deviation:.3e} exceeds {COMPLETENESS_TOL:.0e}"
        ),
    }


def _check_dims(expected: int, got: int, what: str) -> None:
    if expected != got:
        raise StructuralError(f"{what} has dimension {got}, expected {expected}")


def channel_map(channel: KrausChannel, matrix: np.ndarray) -> np.ndarray:
    """Apply ``E`` to an arbitrary (not necessarily positive) matrix."""
    return sum(op @ matrix @ op.conj().T for op in channel.operators)


def dual_channel(channel: KrausChannel, matrix: np.ndarray) -> np.ndarray:
    """Heisenberg action ``E#[X] = sum C_i^dagger X C_i``."""
    return sum(op.conj().T @ matrix @ op for op in channel.operators)


def apply_channel(channel: KrausChannel, rho: DensityMatrix) -> DensityMatrix:
    """Apply the event superoperator to a state.

    Raises:
        StructuralError: On dimension mismatch.
        InvalidStateError: If the channel is not trace preserving.
    """
    _check_dims(channel.dim, rho.dim, "state")
    channel.require_valid()
    out = channel_map(channel, rho.entries)
    return DensityMatrix((out + out.conj().T) / 2)


def channel_superoperator(channel: KrausChannel) -> np.ndarray:
    """Matrix of ``E`` acting on row-major vectorized operators."""
    return sum(np.kron(op, op.conj()) for op in channel.operators)


def hamiltonian_superoperator(h: Hamiltonian) -> np.ndarray:
    """Matrix of ``L_S[rho] = -i [H, rho]``."""
    eye = np.eye(h.dim)
    return -1j * (np.kron(h.matrix, eye) - np.kron(eye, h.matrix.T))


def event_generator(channel: KrausChannel) -> np.ndarray:
    """Return ``L = E - 1`` as a ``dim^2 x dim^2`` matrix.

    Raises:
        InvalidStateError: If the channel is not trace preserving.
    """
    channel.require_valid()
    return channel_superoperator(channel) - np.eye(channel.dim**2)


def apply_superoperator(superop: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """Apply a vectorized superoperator to a matrix."""
    return unvec(superop @ vec(matrix))


def superoperator_commutator_norm(a: np.ndarray, b: np.ndarray) -> float:
    """Spectral norm of ``[A, B]`` for two superoperator matrices."""
    return float(np.linalg.norm(a @ b - b @ a, ord=2))


def unitary_step(h: Hamiltonian, rho: DensityMatrix, dt: float) -> DensityMatrix:
    """Propagate ``rho -> U rho U^dagger`` with ``U = exp(-i H dt)``.

    Raises:
        ValueError: If ``dt`` is negative.
        StructuralError: On dimension mismatch.
    """
    if dt < 0:
        raise ValueError(f"dt must be non-negative, got {dt}")
    _check_dims(h.dim, rho.dim, "state")
    u = h.propagator(dt)
    out = u @ rho.entries @ u.conj().T
    return DensityMatrix((out + out.conj().T) / 2)


def expect(rho: DensityMatrix, a: Observable) -> float:
    """Return ``Tr(rho A)``."""
    _check_dims(a.dim, rho.dim, "state")
    return float(np.trace(rho.entries @ a.matrix).real)
