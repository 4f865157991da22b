"""Tests for pulse sequence builders, CPMG wrapping and timing validation."""

import math

import pytest

from lib.errors import DomainError, TimingError
from lib.sequences import (
    BUILDERS,
    MINUS_X,
    MINUS_Y,
    X,
    Y,
    EventKind,
    PulseSequence,
    build_free_evolution,
    build_mrev8,
    build_mrev16,
    build_wahuha,
    delay,
    pulse,
    sample,
    validate_timing,
    wrap_cpmg,
)

TAU = 5e-6


def phases(seq):
    return [e.phase for e in seq.events if e.kind is EventKind.PULSE]


def delays(seq):
    return [e.duration for e in seq.events if e.kind is EventKind.DELAY]


class TestBuilders:
    """Tests for the WAHUHA and MREV builders."""

    def test_wahuha_layout(self):
        """tau X tau/2 -Y 2tau Y 3tau/2 -X tau, cycle 6 tau."""
        seq = build_wahuha(TAU)
        assert phases(seq) == [X, MINUS_Y, Y, MINUS_X]
        assert delays(seq) == pytest.approx([TAU, TAU / 2, 2 * TAU, 1.5 * TAU, TAU])
        assert seq.cycle_time == pytest.approx(6 * TAU)
        assert seq.metadata["symmetric"] is False

    def test_symmetric_wahuha_layout(self):
        """tau X tau -Y 2tau Y tau -X tau reads the same backwards."""
        seq = build_wahuha(TAU, symmetric=True)
        assert phases(seq) == [X, MINUS_Y, Y, MINUS_X]
        assert delays(seq) == pytest.approx([TAU, TAU, 2 * TAU, TAU, TAU])
        assert delays(seq) == delays(seq)[::-1]

    def test_wahuha_short_window_limits_pulse_width(self):
        """The tau/2 window of the default layout cannot hold a pulse of width tau/2."""
        with pytest.raises(TimingError, match="too short"):
            build_wahuha(TAU, TAU / 2)
        assert validate_timing(build_wahuha(TAU, 0.6 * TAU, symmetric=True)).success

    def test_mrev8_helicities(self):
        """The two helicities differ by swapping y and -y."""
        plus, minus = phases(build_mrev8(TAU, helicity="+")), phases(build_mrev8(TAU, helicity="-"))
        assert plus == [X, MINUS_Y, Y, MINUS_X, MINUS_X, MINUS_Y, Y, X]
        swap = {Y: MINUS_Y, MINUS_Y: Y, X: X, MINUS_X: MINUS_X}
        assert minus == [swap[p] for p in plus]
        assert build_mrev8(TAU).cycle_time == pytest.approx(12 * TAU)

    def test_mrev16_concatenates_helicities(self):
        """MREV-16 is MREV-8(+) then MREV-8(-), 16 pulses in 24 tau."""
        seq = build_mrev16(TAU)
        assert seq.pulses_per_cycle == 16
        assert phases(seq) == phases(build_mrev8(TAU, helicity="+")) + phases(build_mrev8(TAU, helicity="-"))
        assert seq.cycle_time == pytest.approx(24 * TAU)

    @pytest.mark.parametrize("builder", ["wahuha", "mrev8", "mrev16"])
    def test_every_pulse_is_pi_half(self, builder):
        """Multiple-pulse cycles use only pi/2 pulses."""
        seq = BUILDERS[builder](TAU, 0.0)
        assert all(e.angle == pytest.approx(math.pi / 2) for e in seq.events if e.kind is EventKind.PULSE)

    @pytest.mark.parametrize("builder", ["wahuha", "mrev8", "mrev16"])
    def test_finite_pulses_keep_cycle_time(self, builder):
        """Centred rectangles trim the delays so the cycle still sums to its nominal length."""
        seq = BUILDERS[builder](TAU, 1e-6)
        assert seq.event_cycle_sum == pytest.approx(seq.cycle_time, rel=1e-12)
        assert validate_timing(seq).success

    def test_pulse_width_must_be_below_tau(self):
        """pulse_width >= tau cannot be laid out."""
        with pytest.raises(TimingError):
            build_mrev16(TAU, TAU)

    def test_unknown_helicity(self):
        """Only '+' and '-' are helicities."""
        with pytest.raises(DomainError):
            build_mrev8(TAU, helicity="x")

    def test_mid_sample_splits_last_window(self):
        """sample_position='mid' puts the sample halfway through the final delay."""
        seq = build_wahuha(TAU, sample_position="mid")
        assert seq.events[-2].kind is EventKind.SAMPLE
        assert seq.events[-1].duration == pytest.approx(TAU / 2)
        assert seq.event_cycle_sum == pytest.approx(6 * TAU)

    def test_free_evolution(self):
        """A free period is one delay followed by a sample."""
        seq = build_free_evolution(1e-3)
        assert seq.pulses_per_cycle == 0
        assert seq.samples_per_cycle == 1
        assert seq.cycle_time == 1e-3


class TestCpmgWrap:
    """Tests for wrap_cpmg."""

    def test_structure(self):
        """Excitation preamble, one pi pulse after every cycles_per_pi cycles."""
        seq = wrap_cpmg(build_mrev16(TAU), cycles_per_pi=10, n_pi=3)
        assert seq.cycles == 30
        assert seq.n_refocus == 3
        assert [e.label for e in seq.preamble] == ["excite"]
        assert seq.n_pulses == 1 + 30 * 16 + 3
        roles = [role for role, _, _ in seq.blocks()]
        assert roles == ["preamble", "cycle", "refocus", "cycle", "refocus", "cycle", "refocus"]

    def test_cpmg_pi_phase_is_quadrature(self):
        """CPMG refocuses about phi + pi/2; CP about phi."""
        cpmg = wrap_cpmg(build_mrev16(TAU), excitation_phase=0.3)
        cp = wrap_cpmg(build_mrev16(TAU), excitation_phase=0.3, convention="cp")
        assert cpmg.refocus[0].phase == pytest.approx(0.3 + math.pi / 2)
        assert cp.refocus[0].phase == pytest.approx(0.3)
        assert cpmg.refocus[0].nominal_angle == pytest.approx(math.pi)

    def test_pi_amplitude_error(self):
        """The error scales only the refocusing pulse."""
        seq = wrap_cpmg(build_mrev16(TAU), pi_amplitude_error=0.02)
        assert seq.refocus[0].angle == pytest.approx(math.pi * 1.02)
        assert seq.preamble[0].angle == pytest.approx(math.pi / 2)

    def test_finite_pi_pulse_is_twice_inner_width(self):
        """The pi pulse takes twice the pi/2 width at the same Rabi frequency."""
        seq = wrap_cpmg(build_mrev16(TAU, 1e-6))
        assert seq.refocus[0].duration == pytest.approx(2e-6)
        assert seq.refocus[0].rabi == pytest.approx(seq.preamble[0].rabi)

    def test_total_duration(self):
        """Delta pulses add no time: total = cycles x cycle time."""
        seq = wrap_cpmg(build_mrev16(TAU), cycles_per_pi=4, n_pi=5)
        assert seq.total_duration == pytest.approx(20 * 24 * TAU)

    def test_cannot_wrap_twice(self):
        """A wrapped sequence already has a preamble."""
        with pytest.raises(DomainError):
            wrap_cpmg(wrap_cpmg(build_mrev16(TAU)))

    @pytest.mark.parametrize("kwargs", [{"cycles_per_pi": 0}, {"n_pi": 0}])
    def test_rejects_zero_counts(self, kwargs):
        """cycles_per_pi and n_pi must be >= 1."""
        with pytest.raises(DomainError):
            wrap_cpmg(build_mrev16(TAU), **kwargs)


class TestInverted:
    """Tests for PulseSequence.inverted."""

    def test_reverses_and_inverts_pulses(self):
        """Last pulse first, each at phase + pi, samples dropped."""
        seq = build_wahuha(TAU)
        inverse = seq.inverted()
        inverse_phases = phases(inverse)
        assert inverse_phases == pytest.approx([(p + math.pi) % (2 * math.pi) for p in reversed(phases(seq))])
        assert inverse.samples_per_cycle == 0
        assert inverse.cycle_time == pytest.approx(seq.cycle_time)


class TestValidateTiming:
    """Tests for validate_timing."""

    def test_consistent_sequence_passes(self):
        """Builder output has no errors or warnings."""
        report = validate_timing(build_mrev16(TAU, 1e-6))
        assert report.success
        assert report.warnings == ()
        assert report.duty_cycle == pytest.approx(16e-6 / (24 * TAU))

    def test_inconsistent_cycle_time_is_an_error(self):
        """A declared cycle time that disagrees with the events is reported, not raised."""
        seq = PulseSequence(events=(delay(TAU), pulse(math.pi / 2, X), delay(TAU), sample()), cycle_time=3 * TAU)
        report = validate_timing(seq)
        assert not report.success
        assert report.errors[0].startswith("cycle_inconsistent")

    def test_wide_pulses_warn(self):
        """pulse_width / tau above 0.5 warns but still passes."""
        report = validate_timing(build_mrev16(TAU, 0.8 * TAU))
        assert report.success
        assert any("pulse_width/tau" in w for w in report.warnings)

    def test_missing_sample_warns(self):
        """A cycle without samples records nothing."""
        seq = PulseSequence(events=(delay(TAU),), cycle_time=TAU)
        assert any("no sample" in w for w in validate_timing(seq).warnings)

    def test_negative_duration_rejected_at_construction(self):
        """Events cannot have negative duration."""
        with pytest.raises(TimingError):
            delay(-1e-6)
