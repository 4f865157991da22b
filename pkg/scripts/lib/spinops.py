"""Dense spin-1/2 operator algebra on the 2^N product space.

Spin 0 is the most significant tensor slot (leftmost kron factor); basis
state index s has spin j up (I^z = +1/2) when bit (N-1-j) of s is 0.

All Hamiltonians are angular frequencies (rad/s, hbar = 1). The secular
dipolar pair sum runs over unordered pairs j < k, each counted once.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Self

import numpy as np

from lib.errors import DomainError, NumericalError, ResourceError
from lib.lattice import SpinSystem

logger = logging.getLogger(__name__)

DEFAULT_MAX_SPINS = 14

HERMITIAN_TOLERANCE = 1e-12
TRACE_TOLERANCE = 1e-12

PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def check_spin_count(n_spins: int, cap: int = DEFAULT_MAX_SPINS) -> int:
    """Validate n_spins against the dense-matrix cap and return the dimension."""
    if n_spins < 1:
        raise DomainError(f"n_spins must be >= 1, got {n_spins}")
    if n_spins > cap:
        dim = 2**n_spins
        gib = dim * dim * 16 / 2**30
        raise ResourceError(
            f"{n_spins} spins exceed the cap of {cap}: one dense {dim}x{dim} "
            f"complex operator needs {gib:.3g} GiB"
        )
    return 2**n_spins


def _relative_antihermitian_norm(matrix: np.ndarray) -> float:
    scale = np.linalg.norm(matrix)
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(matrix - matrix.conj().T) / scale)


@dataclass(frozen=True, slots=True)
class HermitianOperator:
    """Immutable Hermitian matrix on 2^N dimensions."""

    matrix: np.ndarray

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=complex)
        dim = matrix.shape[0]
        if matrix.ndim != 2 or matrix.shape != (dim, dim) or dim < 2 or dim & (dim - 1):
            raise DomainError(f"operator shape {matrix.shape} is not 2^N x 2^N")
        if not np.all(np.isfinite(matrix)):
            raise NumericalError("operator has non-finite entries")
        if _relative_antihermitian_norm(matrix) > HERMITIAN_TOLERANCE:
            raise DomainError("operator is not Hermitian")
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_spins(self) -> int:
        return self.dim.bit_length() - 1

    def __add__(self, other: HermitianOperator) -> HermitianOperator:
        return HermitianOperator(self.matrix + other.matrix)

    def __sub__(self, other: HermitianOperator) -> HermitianOperator:
        return HermitianOperator(self.matrix - other.matrix)

    def scaled(self, factor: float) -> HermitianOperator:
        return HermitianOperator(self.matrix * factor)

    def norm(self) -> float:
        """Frobenius norm."""
        return float(np.linalg.norm(self.matrix))

    def commutes_with(self, other: HermitianOperator, atol: float = 1e-10) -> bool:
        commutator = self.matrix @ other.matrix - other.matrix @ self.matrix
        return float(np.linalg.norm(commutator)) <= atol * max(1.0, self.norm() * other.norm())


@dataclass(frozen=True, slots=True)
class DeviationState:
    """Traceless Hermitian deviation density matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=complex)
        dim = matrix.shape[0]
        if matrix.ndim != 2 or matrix.shape != (dim, dim) or dim < 2 or dim & (dim - 1):
            raise DomainError(f"state shape {matrix.shape} is not 2^N x 2^N")
        if not np.all(np.isfinite(matrix)):
            raise NumericalError("state has non-finite entries")
        if _relative_antihermitian_norm(matrix) > 1e-10:
            raise DomainError("deviation state is not Hermitian")
        scale = max(1.0, float(np.linalg.norm(matrix)))
        if abs(np.trace(matrix)) > TRACE_TOLERANCE * scale * dim:
            raise DomainError("deviation state is not traceless")
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_spins(self) -> int:
        return self.dim.bit_length() - 1

    def conjugated(self, unitary: np.ndarray) -> Self:
        """U rho U^dagger."""
        return type(self)(unitary @ self.matrix @ unitary.conj().T)

    def norm(self) -> float:
        return float(np.linalg.norm(self.matrix))


# =============================================================================
# Basis-state bookkeeping
# =============================================================================

@lru_cache(maxsize=32)
def spin_bits(n_spins: int) -> np.ndarray:
    """Array [j, s] = bit of spin j in basis state s (0 = up, 1 = down)."""
    states = np.arange(2**n_spins)
    shifts = np.arange(n_spins - 1, -1, -1)
    bits = (states[None, :] >> shifts[:, None]) & 1
    bits.setflags(write=False)
    return bits


def spin_z_values(n_spins: int) -> np.ndarray:
    """Array [j, s] = eigenvalue of I^z_j on basis state s (+1/2 or -1/2)."""
    return 0.5 - spin_bits(n_spins)


# =============================================================================
# Operators
# =============================================================================

def _embed(n_spins: int, factors: dict[int, np.ndarray]) -> np.ndarray:
    result = np.ones((1, 1), dtype=complex)
    identity = np.eye(2, dtype=complex)
    for slot in range(n_spins):
        result = np.kron(result, factors.get(slot, identity))
    return result


def spin_component(
    n_spins: int, j: int, axis: str, cap: int = DEFAULT_MAX_SPINS
) -> HermitianOperator:
    """I^axis_j: the spin-1/2 component (eigenvalues +-1/2) in tensor slot j.

    Raises:
        ResourceError: If n_spins exceeds the cap.
        DomainError: If j or axis is invalid.
    """
    check_spin_count(n_spins, cap)
    if not 0 <= j < n_spins:
        raise DomainError(f"spin index {j} out of range for {n_spins} spins")
    if axis not in PAULI:
        raise DomainError(f"axis must be one of x, y, z; got {axis!r}")
    return HermitianOperator(_embed(n_spins, {j: PAULI[axis] / 2}))


def total_component(n_spins: int, axis: str, cap: int = DEFAULT_MAX_SPINS) -> HermitianOperator:
    """Sum_j I^axis_j."""
    check_spin_count(n_spins, cap)
    if axis == "z":
        return HermitianOperator(np.diag(spin_z_values(n_spins).sum(axis=0)).astype(complex))
    total = sum(spin_component(n_spins, j, axis, cap).matrix for j in range(n_spins))
    return HermitianOperator(total)


def offset_hamiltonian(offsets: np.ndarray) -> HermitianOperator:
    """-Sum_j omega_j I^z_j (diagonal)."""
    offsets = np.asarray(offsets, dtype=float)
    diagonal = -(offsets[:, None] * spin_z_values(len(offsets))).sum(axis=0)
    return HermitianOperator(np.diag(diagonal).astype(complex))


def dipolar_hamiltonian(couplings: np.ndarray) -> HermitianOperator:
    """-Sum_{j<k} d_jk [I_j . I_k - 3 I^z_j I^z_k].

    Built directly in the product basis: the I^z I^z part is diagonal and the
    flip-flop part (I^x I^x + I^y I^y) couples states that differ by swapping
    the two spins, with matrix element 1/2.
    """
    couplings = np.asarray(couplings, dtype=float)
    n = len(couplings)
    dim = 2**n
    z = spin_z_values(n)
    bits = spin_bits(n)
    states = np.arange(dim)
    matrix = np.zeros((dim, dim), dtype=complex)
    diagonal = np.zeros(dim)
    for j in range(n):
        for k in range(j + 1, n):
            d = couplings[j, k]
            if d == 0.0:
                continue
            diagonal += 2.0 * d * z[j] * z[k]
            differ = bits[j] != bits[k]
            source = states[differ]
            target = source ^ ((1 << (n - 1 - j)) | (1 << (n - 1 - k)))
            matrix[target, source] += -0.5 * d
    matrix[states, states] += diagonal
    return HermitianOperator(matrix)


def system_hamiltonian(sys: SpinSystem, cap: int = DEFAULT_MAX_SPINS) -> HermitianOperator:
    """Secular rotating-frame Hamiltonian of a nuclear dipolar solid (rad/s).

    H = -Sum_j omega_j I^z_j - Sum_{j<k} d_jk [I_j . I_k - 3 I^z_j I^z_k]
    """
    check_spin_count(sys.n_spins, cap)
    return HermitianOperator(
        offset_hamiltonian(sys.offsets).matrix + dipolar_hamiltonian(sys.couplings).matrix
    )


def rf_hamiltonian(n_spins: int, rabi: float, phase: float, cap: int = DEFAULT_MAX_SPINS) -> HermitianOperator:
    """Rotating-frame RF term Omega Sum_j (cos phi I^x_j + sin phi I^y_j).

    Sign chosen so exp(-i H_rf t) = rotation(n, Omega t, phi).
    """
    if rabi < 0:
        raise DomainError(f"Rabi frequency must be >= 0, got {rabi}")
    check_spin_count(n_spins, cap)
    generator = (
        np.cos(phase) * total_component(n_spins, "x", cap).matrix
        + np.sin(phase) * total_component(n_spins, "y", cap).matrix
    )
    return HermitianOperator(rabi * generator)


def single_spin_rotation(angle: float, phase: float) -> np.ndarray:
    """exp(-i angle (cos phi I^x + sin phi I^y)) on one spin."""
    return (
        np.cos(angle / 2) * np.eye(2, dtype=complex)
        - 1j * np.sin(angle / 2) * (np.cos(phase) * PAULI["x"] + np.sin(phase) * PAULI["y"])
    )


def rotation(n_spins: int, angle: float, phase: float) -> np.ndarray:
    """Global rotation U(theta, phi) = exp(-i theta Sum_j (cos phi I^x_j + sin phi I^y_j)).

    Exact: the generator is a sum over spins, so U is a kron power of the
    single-spin rotation.
    """
    single = single_spin_rotation(angle, phase)
    unitary = np.ones((1, 1), dtype=complex)
    for _ in range(n_spins):
        unitary = np.kron(unitary, single)
    return unitary


# =============================================================================
# States and observables
# =============================================================================

def thermal_state(n_spins: int, cap: int = DEFAULT_MAX_SPINS) -> DeviationState:
    """High-temperature deviation c Sum_j I^z_j, c = 4 / (N 2^N).

    The normalization makes the transverse signal of measure_transverse
    exactly 1 in magnitude after an ideal pi/2 pulse.
    """
    dim = check_spin_count(n_spins, cap)
    c = 4.0 / (n_spins * dim)
    return DeviationState(c * total_component(n_spins, "z", cap).matrix)


def _raised_pairs(n_spins: int) -> tuple[np.ndarray, np.ndarray]:
    """(row, col) index arrays of all nonzero entries of Sum_j I^+_j."""
    bits = spin_bits(n_spins)
    states = np.arange(2**n_spins)
    rows, cols = [], []
    for j in range(n_spins):
        up = states[bits[j] == 0]
        rows.append(up)
        cols.append(up | (1 << (n_spins - 1 - j)))
    return np.concatenate(rows), np.concatenate(cols)


def transverse_signal(matrix: np.ndarray) -> complex:
    """Tr(rho Sum_j I^+_j) on a raw density matrix."""
    n_spins = matrix.shape[0].bit_length() - 1
    rows, cols = _raised_pairs(n_spins)
    # Tr(rho A) = Sum_{r,c} A[r, c] rho[c, r], A[r, c] = 1 on raised pairs
    return complex(matrix[cols, rows].sum())


def measure_transverse(state: DeviationState) -> complex:
    """Complex transverse magnetization <I^x> + i <I^y>, unit after ideal excitation."""
    return transverse_signal(state.matrix)


def measure_longitudinal(state: DeviationState) -> float:
    """Tr(rho Sum_j I^z_j), normalized like measure_transverse."""
    z_total = spin_z_values(state.n_spins).sum(axis=0)
    return float(np.real(np.dot(np.diag(state.matrix), z_total)))
