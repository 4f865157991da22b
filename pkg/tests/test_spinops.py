"""Tests for the spin operator algebra."""

import math

import numpy as np
import pytest
from scipy import linalg

from lib.errors import DomainError, ResourceError
from lib.lattice import SpinSystem
from lib.spinops import (
    DeviationState,
    HermitianOperator,
    check_spin_count,
    dipolar_hamiltonian,
    measure_longitudinal,
    measure_transverse,
    offset_hamiltonian,
    rf_hamiltonian,
    rotation,
    spin_component,
    system_hamiltonian,
    thermal_state,
    total_component,
)


def commutator(a, b):
    return a @ b - b @ a


class TestSpinComponents:
    """Tests for spin_component and total_component."""

    @pytest.mark.parametrize("n_spins", [1, 2, 3])
    def test_su2_commutation(self, n_spins):
        """[I^x_j, I^y_j] = i I^z_j on every slot."""
        for j in range(n_spins):
            ix = spin_component(n_spins, j, "x").matrix
            iy = spin_component(n_spins, j, "y").matrix
            iz = spin_component(n_spins, j, "z").matrix
            np.testing.assert_allclose(commutator(ix, iy), 1j * iz, atol=1e-14)

    def test_different_spins_commute(self):
        """Components on different slots commute."""
        a = spin_component(3, 0, "x").matrix
        b = spin_component(3, 2, "y").matrix
        np.testing.assert_allclose(commutator(a, b), 0, atol=1e-14)

    def test_spin_zero_is_leftmost_factor(self):
        """I^z_0 should be +1/2 on the first half of the basis."""
        diagonal = np.diag(spin_component(2, 0, "z").matrix).real
        np.testing.assert_allclose(diagonal, [0.5, 0.5, -0.5, -0.5])

    def test_total_z_matches_sum(self):
        """The diagonal shortcut for total I^z should equal the explicit sum."""
        explicit = sum(spin_component(3, j, "z").matrix for j in range(3))
        np.testing.assert_allclose(total_component(3, "z").matrix, explicit)

    def test_invalid_axis_and_index(self):
        """Bad axis or spin index should raise DomainError."""
        with pytest.raises(DomainError):
            spin_component(2, 0, "w")
        with pytest.raises(DomainError):
            spin_component(2, 2, "x")


class TestCaps:
    """Tests for the dense-matrix cap."""

    def test_over_cap_raises_resource_error(self):
        """Exceeding the cap should fail before allocating anything."""
        with pytest.raises(ResourceError, match="GiB"):
            check_spin_count(15, cap=14)

    def test_thermal_state_respects_cap(self):
        """Constructors should apply the caller's cap."""
        with pytest.raises(ResourceError):
            thermal_state(4, cap=3)


class TestHamiltonians:
    """Tests for the secular system Hamiltonian."""

    def test_offset_sign(self):
        """H = -omega I^z for one spin."""
        h = offset_hamiltonian(np.array([2.0])).matrix
        np.testing.assert_allclose(np.diag(h).real, [-1.0, 1.0])

    def test_dipolar_matches_operator_definition(self):
        """Basis-level construction equals -d (I_j . I_k - 3 I^z_j I^z_k)."""
        d = 1.7
        expected = np.zeros((4, 4), dtype=complex)
        for axis in "xyz":
            expected += spin_component(2, 0, axis).matrix @ spin_component(2, 1, axis).matrix
        expected -= 3 * spin_component(2, 0, "z").matrix @ spin_component(2, 1, "z").matrix
        expected *= -d
        built = dipolar_hamiltonian(np.array([[0.0, d], [d, 0.0]])).matrix
        np.testing.assert_allclose(built, expected, atol=1e-14)

    def test_dipolar_conserves_total_z(self, triangle_system):
        """The secular Hamiltonian commutes with total I^z."""
        h = system_hamiltonian(triangle_system)
        assert h.commutes_with(total_component(3, "z"))

    def test_dipolar_term_is_traceless(self, triangle_system):
        """Secular dipolar Hamiltonians are traceless."""
        h = dipolar_hamiltonian(triangle_system.couplings).matrix
        assert abs(np.trace(h)) < 1e-9

    def test_rf_generates_rotation(self):
        """exp(-i H_rf t) should equal rotation(Omega t, phi)."""
        rabi, phase, t = 2 * math.pi * 50e3, 0.7, 3e-6
        h_rf = rf_hamiltonian(2, rabi, phase).matrix
        np.testing.assert_allclose(linalg.expm(-1j * h_rf * t), rotation(2, rabi * t, phase), atol=1e-12)

    def test_rejects_non_hermitian(self):
        """HermitianOperator should reject a non-Hermitian matrix."""
        with pytest.raises(DomainError):
            HermitianOperator(np.array([[0, 1], [0, 0]], dtype=complex))


class TestRotations:
    """Tests for global rotations."""

    def test_rotation_is_unitary(self):
        """U U^dagger = 1."""
        u = rotation(3, 1.234, 0.4)
        np.testing.assert_allclose(u @ u.conj().T, np.eye(8), atol=1e-14)

    def test_full_turn_is_minus_identity(self):
        """A 2 pi rotation of a spin-1/2 is -1 per spin."""
        np.testing.assert_allclose(rotation(1, 2 * math.pi, 0.3), -np.eye(2), atol=1e-14)

    def test_opposite_phase_inverts(self):
        """Phase phi + pi undoes phase phi."""
        u = rotation(2, math.pi / 2, 0.0)
        v = rotation(2, math.pi / 2, math.pi)
        np.testing.assert_allclose(v @ u, np.eye(4), atol=1e-14)


class TestStatesAndObservables:
    """Tests for thermal states and measurements."""

    @pytest.mark.parametrize("n_spins", [1, 2, 4])
    def test_unit_longitudinal_then_unit_transverse(self, n_spins):
        """Thermal state reads 1 along z; after pi/2 about x it reads 1 in the plane."""
        rho = thermal_state(n_spins)
        assert measure_longitudinal(rho) == pytest.approx(1.0)
        assert measure_transverse(rho) == pytest.approx(0.0)
        excited = rho.conjugated(rotation(n_spins, math.pi / 2, 0.0))
        assert abs(measure_transverse(excited)) == pytest.approx(1.0)

    def test_pi_half_about_x_points_along_minus_y(self):
        """Right-handed rotation about x takes z to -y."""
        excited = thermal_state(1).conjugated(rotation(1, math.pi / 2, 0.0))
        assert measure_transverse(excited) == pytest.approx(-1j)

    def test_free_precession_sign(self):
        """Under H = -omega I^z the signal goes as exp(-i omega t)."""
        omega, t = 2 * math.pi * 100.0, 1.3e-3
        sys = SpinSystem(offsets=[omega], couplings=[[0.0]])
        h = system_hamiltonian(sys).matrix
        u = linalg.expm(-1j * h * t)
        start = thermal_state(1).conjugated(rotation(1, math.pi / 2, math.pi / 2))
        assert measure_transverse(start) == pytest.approx(1.0)
        assert measure_transverse(start.conjugated(u)) == pytest.approx(np.exp(-1j * omega * t))

    def test_deviation_state_must_be_traceless(self):
        """A state with a trace should be rejected."""
        with pytest.raises(DomainError):
            DeviationState(np.eye(2, dtype=complex))
