"""Pulse sequences as timed event lists.

A PulseSequence is one period (``events``) repeated ``cycles`` times, with
optional ``preamble`` events before the first cycle and ``refocus`` events
inserted after every ``cycles_per_refocus`` cycles. That structure is what
lets the engine build one propagator per period and reuse it.

Phases are radians in the rotating frame: x = 0, y = pi/2, -x = pi, -y = 3pi/2.
A pulse of angle theta and phase phi is exp(-i theta (cos phi I^x + sin phi I^y)).

Finite pulses are rectangles centred on the instants of the delta-pulse
layout, so the cycle time does not depend on the pulse width.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import StrEnum
from typing import Iterator, Self

from lib.errors import DomainError, TimingError

X, Y, MINUS_X, MINUS_Y = 0.0, math.pi / 2, math.pi, 3 * math.pi / 2

# Warn when pulse width approaches the inter-pulse spacing
WIDTH_RATIO_WARNING = 0.5

# Relative tolerance for the cycle-sum consistency check
CYCLE_SUM_RTOL = 1e-12
CYCLE_SUM_ATOL = 1e-15

# Delta-pulse layouts: delays in units of tau (one more than pulses), pulse phases
# Unequal y windows leave the default cycle without a mirror point
WAHUHA_DELAYS = (1, 0.5, 2, 1.5, 1)
WAHUHA_SYMMETRIC_DELAYS = (1, 1, 2, 1, 1)
WAHUHA_PHASES = (X, MINUS_Y, Y, MINUS_X)

MREV8_DELAYS = (1, 1, 2, 1, 2, 1, 2, 1, 1)
MREV8_PHASES = {
    "+": (X, MINUS_Y, Y, MINUS_X, MINUS_X, MINUS_Y, Y, X),
    "-": (X, Y, MINUS_Y, MINUS_X, MINUS_X, Y, MINUS_Y, X),
}

PHASE_NAMES = {X: "x", Y: "y", MINUS_X: "-x", MINUS_Y: "-y"}


class EventKind(StrEnum):
    PULSE = "pulse"
    DELAY = "delay"
    SAMPLE = "sample"


class CpmgConvention(StrEnum):
    """Phase of the refocusing pi pulses relative to the excitation phase."""

    CPMG = "cpmg"  # phi + pi/2
    CP = "cp"  # phi


@dataclass(frozen=True, slots=True, kw_only=True)
class PulseEvent:
    """One timed element of a sequence."""

    kind: EventKind
    duration: float = 0.0
    phase: float = 0.0
    nominal_angle: float = 0.0
    amplitude_error: float = 0.0
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", EventKind(self.kind))
        if self.duration < 0:
            raise TimingError(f"event {self.label!r} has negative duration {self.duration}")
        if self.kind is EventKind.SAMPLE and self.duration != 0:
            raise TimingError("sample events must have zero duration")

    @property
    def angle(self) -> float:
        """Actual rotation angle including the amplitude error."""
        return self.nominal_angle * (1.0 + self.amplitude_error)

    @property
    def rabi(self) -> float:
        """Constant nutation rate of a finite pulse (rad/s); 0 for delta pulses."""
        if self.kind is not EventKind.PULSE or self.duration == 0:
            return 0.0
        return self.angle / self.duration

    def inverse(self) -> Self:
        """Event undoing this one's rotation (pulses only; delays unchanged)."""
        if self.kind is not EventKind.PULSE:
            return self
        return replace(self, phase=(self.phase + math.pi) % (2 * math.pi), label=f"{self.label}^-1")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "duration_s": self.duration,
            "phase_rad": self.phase if self.kind is EventKind.PULSE else None,
            "angle_rad": self.angle if self.kind is EventKind.PULSE else None,
            "label": self.label,
        }


def pulse(angle: float, phase: float, width: float = 0.0, amplitude_error: float = 0.0, label: str = "") -> PulseEvent:
    return PulseEvent(
        kind=EventKind.PULSE,
        duration=width,
        phase=phase,
        nominal_angle=angle,
        amplitude_error=amplitude_error,
        label=label,
    )


def delay(duration: float, label: str = "") -> PulseEvent:
    return PulseEvent(kind=EventKind.DELAY, duration=duration, label=label)


def sample(label: str = "S") -> PulseEvent:
    return PulseEvent(kind=EventKind.SAMPLE, label=label)


@dataclass(frozen=True, slots=True, kw_only=True)
class PulseSequence:
    """One sequence period repeated ``cycles`` times, with optional CPMG framing."""

    events: tuple[PulseEvent, ...]
    cycle_time: float
    cycles: int = 1
    metadata: dict = field(default_factory=dict)
    preamble: tuple[PulseEvent, ...] = ()
    refocus: tuple[PulseEvent, ...] = ()
    cycles_per_refocus: int = 0

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        object.__setattr__(self, "preamble", tuple(self.preamble))
        object.__setattr__(self, "refocus", tuple(self.refocus))
        if not self.events:
            raise TimingError("a pulse sequence needs at least one event")
        if self.cycles < 1:
            raise TimingError(f"cycles must be >= 1, got {self.cycles}")
        if self.refocus and self.cycles_per_refocus < 1:
            raise TimingError("refocus events need cycles_per_refocus >= 1")

    @property
    def pulses_per_cycle(self) -> int:
        return sum(1 for e in self.events if e.kind is EventKind.PULSE)

    @property
    def samples_per_cycle(self) -> int:
        return sum(1 for e in self.events if e.kind is EventKind.SAMPLE)

    @property
    def n_refocus(self) -> int:
        if not self.refocus:
            return 0
        return self.cycles // self.cycles_per_refocus

    @property
    def n_pulses(self) -> int:
        count = lambda events: sum(1 for e in events if e.kind is EventKind.PULSE)
        return count(self.preamble) + self.cycles * self.pulses_per_cycle + self.n_refocus * count(self.refocus)

    @property
    def event_cycle_sum(self) -> float:
        return math.fsum(e.duration for e in self.events)

    @property
    def total_duration(self) -> float:
        return (
            math.fsum(e.duration for e in self.preamble)
            + self.cycles * self.event_cycle_sum
            + self.n_refocus * math.fsum(e.duration for e in self.refocus)
        )

    def blocks(self) -> Iterator[tuple[str, tuple[PulseEvent, ...], int]]:
        """Yield (role, events, repeat) runs: preamble, cycle runs, refocus."""
        if self.preamble:
            yield "preamble", self.preamble, 1
        if not self.refocus:
            yield "cycle", self.events, self.cycles
            return
        remaining = self.cycles
        while remaining > 0:
            run = min(self.cycles_per_refocus, remaining)
            yield "cycle", self.events, run
            remaining -= run
            if run == self.cycles_per_refocus:
                yield "refocus", self.refocus, 1

    def flatten(self) -> list[PulseEvent]:
        """Every event in execution order."""
        flat: list[PulseEvent] = []
        for _, events, repeat in self.blocks():
            for _ in range(repeat):
                flat.extend(events)
        return flat

    def inverted(self) -> Self:
        """Time-reversed sequence with every pulse replaced by its inverse rotation.

        Undoes the pulses of this sequence exactly; free evolution is only
        undone when the system Hamiltonian is zero. Samples are dropped.
        """
        reversed_events = tuple(
            e.inverse() for e in reversed(self.flatten()) if e.kind is not EventKind.SAMPLE
        )
        if not reversed_events:
            reversed_events = (delay(0.0),)
        return PulseSequence(
            events=reversed_events,
            cycle_time=math.fsum(e.duration for e in reversed_events),
            cycles=1,
            metadata={"builder": "inverted", "source": self.metadata.get("builder")},
        )

    def to_dict(self) -> dict:
        """JSON event-list document."""
        return {
            "metadata": self.metadata,
            "cycle_time_s": self.cycle_time,
            "cycles": self.cycles,
            "cycles_per_refocus": self.cycles_per_refocus,
            "preamble": [e.to_dict() for e in self.preamble],
            "events": [e.to_dict() for e in self.events],
            "refocus": [e.to_dict() for e in self.refocus],
        }


# =============================================================================
# Builders
# =============================================================================

def _check_timing(tau: float, pulse_width: float) -> None:
    if pulse_width < 0:
        raise TimingError(f"pulse_width must be >= 0, got {pulse_width}")
    if not tau > pulse_width:
        raise TimingError(f"tau ({tau}) must exceed pulse_width ({pulse_width})")


def _layout(
    delays_in_tau: tuple[int, ...],
    phases: tuple[float, ...],
    tau: float,
    pulse_width: float,
    prefix: str,
) -> list[PulseEvent]:
    """Interleave delays and pi/2 pulses, pulses centred on the delta-pulse instants."""
    events: list[PulseEvent] = []
    last = len(delays_in_tau) - 1
    for i, units in enumerate(delays_in_tau):
        # Edge windows lose half a pulse width, interior windows a full one
        trimmed = pulse_width / 2 if i in (0, last) else pulse_width
        length = units * tau - trimmed
        if length <= 0:
            raise TimingError(f"{prefix} window {i} ({units} tau) is too short for pulse_width {pulse_width}")
        events.append(delay(length, label=f"{prefix}d{i}"))
        if i < len(phases):
            events.append(pulse(math.pi / 2, phases[i], pulse_width, label=f"{prefix}P{PHASE_NAMES[phases[i]]}"))
    return events


def _place_sample(events: list[PulseEvent], sample_position: str) -> list[PulseEvent]:
    """Put the sample event in the final free-evolution window."""
    if sample_position == "end":
        return events + [sample()]
    if sample_position == "mid":
        *head, last = events
        if last.kind is not EventKind.DELAY:
            raise TimingError("sequence does not end with a free-evolution window")
        half = last.duration / 2
        return head + [delay(half, last.label + "a"), sample(), delay(last.duration - half, last.label + "b")]
    raise DomainError(f"sample_position must be 'end' or 'mid', got {sample_position!r}")


def build_free_evolution(duration: float, sample_position: str = "end") -> PulseSequence:
    """Pulse-free period: one free-evolution window with a sample."""
    if not duration > 0:
        raise TimingError(f"free evolution duration must be > 0, got {duration}")
    events = _place_sample([delay(duration, label="free")], sample_position)
    return PulseSequence(
        events=tuple(events),
        cycle_time=duration,
        metadata={"builder": "free", "duration": duration, "tau": duration, "pulse_width": 0.0},
    )


def build_wahuha(
    tau: float,
    pulse_width: float = 0.0,
    sample_position: str = "end",
    symmetric: bool = False,
) -> PulseSequence:
    """Four-pulse WAHUHA cycle, cycle time 6 tau.

    Default layout: tau X tau/2 -Y 2tau Y 3tau/2 -X tau. The toggled z, y and x
    frames each get 2 tau, so the zero-order dipolar term vanishes, and the
    first-order dipolar term survives. symmetric=True gives the mirror
    layout tau X tau -Y 2tau Y tau -X tau, whose first-order term cancels.

    Raises:
        TimingError: If tau <= pulse_width, or a pulse does not fit its
            shortest window (tau/2 in the default layout).
    """
    _check_timing(tau, pulse_width)
    layout = WAHUHA_SYMMETRIC_DELAYS if symmetric else WAHUHA_DELAYS
    events = _place_sample(_layout(layout, WAHUHA_PHASES, tau, pulse_width, "W"), sample_position)
    return PulseSequence(
        events=tuple(events),
        cycle_time=6 * tau,
        metadata={"builder": "wahuha", "tau": tau, "pulse_width": pulse_width, "symmetric": symmetric},
    )


def _mrev8_events(tau: float, pulse_width: float, helicity: str) -> list[PulseEvent]:
    if helicity not in MREV8_PHASES:
        raise DomainError(f"helicity must be '+' or '-', got {helicity!r}")
    return _layout(MREV8_DELAYS, MREV8_PHASES[helicity], tau, pulse_width, f"M8{helicity}")


def build_mrev8(
    tau: float,
    pulse_width: float = 0.0,
    helicity: str = "+",
    sample_position: str = "end",
) -> PulseSequence:
    """Eight-pulse MREV-8 cycle, cycle time 12 tau.

    With delta pulses the zero-order average Hamiltonian of the offsets is
    -(1/3) Sum_j omega_j (I^z_j +- I^x_j), the sign of the x part set by the
    helicity, and the dipolar part averages to zero.
    """
    _check_timing(tau, pulse_width)
    events = _place_sample(_mrev8_events(tau, pulse_width, helicity), sample_position)
    return PulseSequence(
        events=tuple(events),
        cycle_time=12 * tau,
        metadata={"builder": "mrev8", "tau": tau, "pulse_width": pulse_width, "helicity": helicity},
    )


def build_mrev16(tau: float, pulse_width: float = 0.0, sample_position: str = "end") -> PulseSequence:
    """MREV-16: the + and - helicity MREV-8 cycles back to back, cycle time 24 tau."""
    _check_timing(tau, pulse_width)
    events = _mrev8_events(tau, pulse_width, "+") + _mrev8_events(tau, pulse_width, "-")
    events = _place_sample(events, sample_position)
    return PulseSequence(
        events=tuple(events),
        cycle_time=24 * tau,
        metadata={"builder": "mrev16", "tau": tau, "pulse_width": pulse_width},
    )


BUILDERS = {
    "free": lambda tau, pulse_width=0.0, **kw: build_free_evolution(tau, **kw),
    "wahuha": build_wahuha,
    "mrev8": build_mrev8,
    "mrev16": build_mrev16,
}


def wrap_cpmg(
    inner: PulseSequence,
    cycles_per_pi: int = 120,
    n_pi: int = 1,
    excitation_phase: float = 0.0,
    pi_amplitude_error: float = 0.0,
    convention: CpmgConvention | str = CpmgConvention.CPMG,
) -> PulseSequence:
    """Excite with pi/2 at phase phi, then n_pi blocks of (cycles_per_pi inner cycles + pi pulse).

    The pi pulses are at phi + pi/2 (CPMG) or phi (CP) and carry
    pi_amplitude_error. Their width is twice the inner pi/2 width.
    """
    if cycles_per_pi < 1:
        raise DomainError(f"cycles_per_pi must be >= 1, got {cycles_per_pi}")
    if n_pi < 1:
        raise DomainError(f"n_pi must be >= 1, got {n_pi}")
    convention = CpmgConvention(convention)
    if inner.preamble or inner.refocus:
        raise DomainError("cannot wrap a sequence that is already wrapped")

    width = float(inner.metadata.get("pulse_width", 0.0))
    pi_phase = excitation_phase + (math.pi / 2 if convention is CpmgConvention.CPMG else 0.0)
    excitation = pulse(math.pi / 2, excitation_phase, width, label="excite")
    refocus = pulse(math.pi, pi_phase, 2 * width, amplitude_error=pi_amplitude_error, label="pi")

    metadata = dict(inner.metadata)
    metadata.update({
        "builder": f"cpmg-{inner.metadata.get('builder', 'custom')}",
        "inner_builder": inner.metadata.get("builder"),
        "cycles_per_pi": cycles_per_pi,
        "n_pi": n_pi,
        "excitation_phase": excitation_phase,
        "pi_phase": pi_phase,
        "pi_amplitude_error": pi_amplitude_error,
        "convention": convention.value,
    })
    return PulseSequence(
        events=inner.events,
        cycle_time=inner.cycle_time,
        cycles=cycles_per_pi * n_pi,
        metadata=metadata,
        preamble=(excitation,),
        refocus=(refocus,),
        cycles_per_refocus=cycles_per_pi,
    )


# =============================================================================
# Diagnostics
# =============================================================================

@dataclass(frozen=True, slots=True, kw_only=True)
class TimingReport:
    """Outcome of validate_timing; errors make the sequence unusable, warnings do not."""

    duty_cycle: float
    cycle_sum: float
    declared_cycle_time: float
    width_ratio: float | None
    errors: tuple[str, ...] = ()
    warnings: tuple[str, ...] = ()

    @property
    def success(self) -> bool:
        return not self.errors

    def to_dict(self) -> dict:
        return {
            "success": self.success,
            "duty_cycle": self.duty_cycle,
            "cycle_sum_s": self.cycle_sum,
            "declared_cycle_time_s": self.declared_cycle_time,
            "width_ratio": self.width_ratio,
            "errors": list(self.errors),
            "warnings": list(self.warnings),
        }


def validate_timing(seq: PulseSequence) -> TimingReport:
    """Check cycle-sum consistency, sample placement and the pulse-width/tau ratio.

    Never raises; problems are listed in the report.
    """
    errors: list[str] = []
    warnings: list[str] = []

    cycle_sum = seq.event_cycle_sum
    if abs(cycle_sum - seq.cycle_time) > CYCLE_SUM_ATOL + CYCLE_SUM_RTOL * abs(seq.cycle_time):
        errors.append(
            f"cycle_inconsistent: events sum to {cycle_sum!r} s but cycle_time is {seq.cycle_time!r} s"
        )
    if seq.cycle_time <= 0:
        errors.append(f"cycle_time must be > 0, got {seq.cycle_time!r}")

    for part, events in (("preamble", seq.preamble), ("events", seq.events), ("refocus", seq.refocus)):
        for i, event in enumerate(events):
            if event.kind is EventKind.SAMPLE and event.duration != 0:
                errors.append(f"{part}[{i}]: sample with nonzero duration")
            if event.duration < 0:
                errors.append(f"{part}[{i}]: negative duration")

    pulse_time = math.fsum(e.duration for e in seq.events if e.kind is EventKind.PULSE)
    duty_cycle = pulse_time / seq.cycle_time if seq.cycle_time > 0 else float("nan")

    width_ratio = None
    tau = seq.metadata.get("tau")
    width = seq.metadata.get("pulse_width")
    if tau and width is not None:
        width_ratio = width / tau
        if width_ratio > WIDTH_RATIO_WARNING:
            warnings.append(
                f"pulse_width/tau = {width_ratio:.3g} exceeds {WIDTH_RATIO_WARNING}: "
                "decoupling degrades as the ratio approaches 1"
            )

    if seq.samples_per_cycle == 0:
        warnings.append("no sample events in the cycle")

    return TimingReport(
        duty_cycle=duty_cycle,
        cycle_sum=cycle_sum,
        declared_cycle_time=seq.cycle_time,
        width_ratio=width_ratio,
        errors=tuple(errors),
        warnings=tuple(warnings),
    )
