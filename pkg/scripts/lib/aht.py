"""Numerical average Hamiltonian theory for delta-pulse sequences.

The toggling frame of free window k is Q_k = P_k ... P_1, the product of
every pulse rotation before it, and the toggled Hamiltonian is
Q_k^dagger H Q_k. Over one cycle of length T the exact toggling-frame
propagator is exp(-i H_n t_n) ... exp(-i H_1 t_1) = exp(-i T (H0 + H1 + ...)).
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import Self

import numpy as np
from scipy import linalg, stats

from lib.errors import CyclicityError, DomainError
from lib.lattice import SpinSystem
from lib.sequences import EventKind, PulseSequence
from lib.spinops import HermitianOperator, rotation, single_spin_rotation, system_hamiltonian

logger = logging.getLogger(__name__)

ZERO_TOLERANCE = 1e-10
CYCLIC_TOLERANCE = 1e-7
# Errors below this are treated as exact and left out of slope fits
ERROR_FLOOR = 1e-13


@dataclass(frozen=True, slots=True)
class ToggledWindow:
    duration: float
    frame: np.ndarray
    hamiltonian: HermitianOperator


@dataclass(frozen=True, slots=True, kw_only=True)
class TogglingFrame:
    windows: tuple[ToggledWindow, ...]
    cycle_time: float
    residual_angle: float = 0.0

    @property
    def dim(self) -> int:
        return self.windows[0].hamiltonian.dim

    def rotated(self, start: int) -> Self:
        """Same cycle started at window `start`: later frames are taken relative to it."""
        if not 0 <= start < len(self.windows):
            raise DomainError(f"start window {start} out of range")
        pivot = self.windows[start].frame
        windows = tuple(
            ToggledWindow(w.duration, w.frame @ pivot.conj().T, HermitianOperator(pivot @ w.hamiltonian.matrix @ pivot.conj().T))
            for w in self.windows[start:] + self.windows[:start]
        )
        return type(self)(windows=windows, cycle_time=self.cycle_time, residual_angle=self.residual_angle)

    def propagator(self) -> np.ndarray:
        """Exact toggling-frame propagator of one cycle."""
        unitary = np.eye(self.dim, dtype=complex)
        for w in self.windows:
            unitary = linalg.expm(-1j * w.hamiltonian.matrix * w.duration) @ unitary
        return unitary


def _rotation_angle(single: np.ndarray) -> float:
    """Rotation angle of an SU(2) matrix, ignoring the +-1 global sign.

    U = cos(a/2) I - i sin(a/2) n.sigma, so the traceless part has Frobenius
    norm sqrt(2) |sin(a/2)|. atan2 keeps the angle accurate near the identity.
    """
    half_trace = np.trace(single) / 2
    traceless = np.linalg.norm(single - half_trace * np.eye(2)) / math.sqrt(2)
    return 2 * math.atan2(traceless, abs(half_trace))


def toggling_frame(seq: PulseSequence, h_sys: HermitianOperator, require_cyclic: bool = True) -> TogglingFrame:
    """Toggled Hamiltonians of every free window in one cycle of seq.

    Only the periodic part of seq is used; CPMG framing is ignored.

    Raises:
        DomainError: If any pulse has finite width.
        CyclicityError: If the pulses do not compose to the identity and
            require_cyclic is set.
    """
    n_spins = h_sys.n_spins
    frame = np.eye(h_sys.dim, dtype=complex)
    single = np.eye(2, dtype=complex)
    windows: list[ToggledWindow] = []

    for event in seq.events:
        match event.kind:
            case EventKind.PULSE:
                if event.duration != 0:
                    raise DomainError("toggling frames need delta pulses (pulse_width = 0)")
                frame = rotation(n_spins, event.angle, event.phase) @ frame
                single = single_spin_rotation(event.angle, event.phase) @ single
            case EventKind.DELAY if event.duration > 0:
                toggled = frame.conj().T @ h_sys.matrix @ frame
                windows.append(ToggledWindow(event.duration, frame.copy(), HermitianOperator(0.5 * (toggled + toggled.conj().T))))

    residual = _rotation_angle(single)
    if require_cyclic and residual > CYCLIC_TOLERANCE:
        raise CyclicityError(residual)
    if not windows:
        raise DomainError("sequence has no free-evolution windows")
    cycle_time = math.fsum(w.duration for w in windows)
    return TogglingFrame(windows=tuple(windows), cycle_time=cycle_time, residual_angle=residual)


def magnus_term(frame: TogglingFrame, order: int) -> HermitianOperator:
    """Average Hamiltonian of the given Magnus order (0 or 1).

    order 0: Sum_k t_k H_k / T
    order 1: -(i / 2T) Sum_{k > l} t_k t_l [H_k, H_l]
    """
    total = frame.cycle_time
    match order:
        case 0:
            matrix = sum(w.duration * w.hamiltonian.matrix for w in frame.windows) / total
        case 1:
            matrix = np.zeros((frame.dim, frame.dim), dtype=complex)
            earlier = np.zeros_like(matrix)
            for w in frame.windows:
                h = w.hamiltonian.matrix
                matrix += w.duration * (h @ earlier - earlier @ h)
                earlier += w.duration * h
            matrix *= -1j / (2 * total)
        case _:
            raise DomainError(f"Magnus order must be 0 or 1, got {order}")
    return HermitianOperator(0.5 * (matrix + matrix.conj().T))


def _class_terms(seq: PulseSequence, sys: SpinSystem, order: int) -> dict[str, HermitianOperator]:
    full = magnus_term(toggling_frame(seq, system_hamiltonian(sys)), order)
    offset = magnus_term(toggling_frame(seq, system_hamiltonian(sys.scaled(coupling_scale=0.0))), order)
    dipolar = magnus_term(toggling_frame(seq, system_hamiltonian(sys.scaled(offset_scale=0.0))), order)
    return {"full": full, "offset": offset, "dipolar": dipolar, "cross": full - offset - dipolar}


def verify_decoupling(seq: PulseSequence, sys: SpinSystem, order: int) -> dict:
    """Frobenius norms of the offset, dipolar and cross parts of one Magnus term.

    Each class is evaluated with the other inputs zeroed; the cross class is
    what remains of the full term. reference_dipolar_norm is the norm of
    the bare dipolar Hamiltonian, for scale.
    """
    try:
        terms = _class_terms(seq, sys, order)
    except (CyclicityError, DomainError) as e:
        return {"success": False, "order": order, "error": str(e)}

    reference = system_hamiltonian(sys.scaled(offset_scale=0.0)).norm()
    norms = {name: term.norm() for name, term in terms.items()}
    return {
        "success": True,
        "order": order,
        "builder": seq.metadata.get("builder"),
        "n_spins": sys.n_spins,
        "offset_norm": norms["offset"],
        "dipolar_norm": norms["dipolar"],
        "cross_norm": norms["cross"],
        "total_norm": norms["full"],
        "reference_dipolar_norm": reference,
        "dipolar_decoupled": norms["dipolar"] <= ZERO_TOLERANCE * max(1.0, reference),
    }


@dataclass(frozen=True, slots=True, kw_only=True)
class ScalingReport:
    """Per-cycle propagator error against the truncated Magnus propagator."""

    cycle_times: tuple[float, ...]
    errors: tuple[float, ...]
    slope: float
    slope_stderr: float
    reference_order: int

    @property
    def exact(self) -> bool:
        return all(e < ERROR_FLOOR for e in self.errors)

    def rows(self) -> list[dict]:
        return [{"cycle_time_s": t, "error": e} for t, e in zip(self.cycle_times, self.errors)]


def cycle_error_scaling(
    family: Callable[[float], PulseSequence],
    parameters: Sequence[float],
    h_sys: HermitianOperator,
    reference_order: int = 0,
) -> ScalingReport:
    """Measure ||U_exact - exp(-i T (H0 [+ H1]))|| over a family of cycle times.

    family maps each parameter (typically tau) to a sequence. The log-log
    slope is fitted over the points whose error is above numerical noise;
    it is NaN when fewer than two remain.

    Raises:
        DomainError: Fewer than 4 points or less than a decade of cycle time.
    """
    if reference_order not in (0, 1):
        raise DomainError(f"reference_order must be 0 or 1, got {reference_order}")
    if len(parameters) < 4:
        raise DomainError(f"need at least 4 cycle times, got {len(parameters)}")

    cycle_times, errors = [], []
    for parameter in parameters:
        frame = toggling_frame(family(parameter), h_sys)
        average = magnus_term(frame, 0).matrix
        if reference_order == 1:
            average = average + magnus_term(frame, 1).matrix
        approximate = linalg.expm(-1j * average * frame.cycle_time)
        cycle_times.append(frame.cycle_time)
        errors.append(float(np.linalg.norm(frame.propagator() - approximate)))

    if max(cycle_times) < 10 * min(cycle_times) * (1 - 1e-12):
        raise DomainError("cycle times must span at least one decade")

    usable = [(t, e) for t, e in zip(cycle_times, errors) if e >= ERROR_FLOOR]
    if len(usable) >= 2:
        fit = stats.linregress(np.log([t for t, _ in usable]), np.log([e for _, e in usable]))
        slope, stderr = float(fit.slope), float(fit.stderr)
    else:
        slope, stderr = float("nan"), float("nan")

    logger.info("Cycle error slope %.3f (reference order %d, %d points)", slope, reference_order, len(usable))
    order = np.argsort(cycle_times)
    return ScalingReport(
        cycle_times=tuple(cycle_times[i] for i in order),
        errors=tuple(errors[i] for i in order),
        slope=slope,
        slope_stderr=stderr,
        reference_order=reference_order,
    )
