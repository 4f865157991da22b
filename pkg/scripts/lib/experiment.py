"""Wiring from a validated ExperimentConfig to simulated and analyzed echo trains.

Realization k of an experiment uses seed base + k. Independent streams
(lattice occupation, cluster origin, offsets, noise) are derived from that
seed by hashing, so changing one stream never shifts another.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import replace
from pathlib import Path

import numpy as np

from lib import analysis, reports
from lib.analysis import AmplitudeMethod, ScanAxis
from lib.config import ExperimentConfig, load_global_config
from lib.engine import DisorderAverage, EchoTrain, disorder_average, evolve
from lib.errors import AnalysisError, DomainError
from lib.lattice import (
    GAMMA_SI29,
    LatticeSpec,
    OffsetModel,
    SiteSet,
    SpinSystem,
    build_spin_system,
    generate_sites,
    select_cluster,
)
from lib.noise import NoiseModel
from lib.sequences import BUILDERS, PulseSequence, wrap_cpmg
from lib.spinops import rotation, system_hamiltonian, thermal_state

logger = logging.getLogger(__name__)

# Magnitude of the zero-order offset scaling for each cycle: the observed
# side-peak sits at detuning x factor
OFFSET_SCALE_FACTORS = {
    "free": 1.0,
    "wahuha": 1 / math.sqrt(3),
    "mrev8": math.sqrt(2) / 3,
    "mrev16": 1 / 3,
}

US = 1e-6


def derive_seed(seed: int, stream: str) -> int:
    """32-bit seed for one named random stream of a realization."""
    digest = hashlib.sha256(f"{seed}|{stream}".encode()).digest()
    return int.from_bytes(digest[:4], "big")


def gamma_from_config(global_config: dict | None) -> float:
    if not global_config:
        return GAMMA_SI29
    gamma_hz = global_config.get("physics", {}).get("gamma_hz_per_t")
    return GAMMA_SI29 if gamma_hz is None else 2 * math.pi * gamma_hz


def build_sequence(config: ExperimentConfig) -> PulseSequence:
    """Pulse sequence of the config, CPMG-wrapped when a cpmg section is present."""
    section = config.sequence
    tau = section.tau_us * US
    width = section.pulse_width_us * US
    kwargs = {"sample_position": section.sample_position}
    if section.builder == "mrev8":
        kwargs["helicity"] = section.helicity
    inner = BUILDERS[section.builder](tau, width, **kwargs)

    if section.cpmg is None:
        return replace(inner, cycles=section.cycles)
    cpmg = section.cpmg
    return wrap_cpmg(
        inner,
        cycles_per_pi=cpmg.cycles_per_pi,
        n_pi=cpmg.n_pi,
        excitation_phase=math.radians(cpmg.excitation_phase_deg),
        pi_amplitude_error=cpmg.pi_amplitude_error,
        convention=cpmg.convention,
    )


def expected_offset_hz(config: ExperimentConfig) -> float:
    """Side-peak position: configured value, else detuning scaled by the cycle."""
    if config.analysis.expected_offset_hz is not None:
        return config.analysis.expected_offset_hz
    return config.offsets.carrier_detuning_hz * OFFSET_SCALE_FACTORS[config.sequence.builder]


def realize_system(config: ExperimentConfig, seed: int, global_config: dict | None = None) -> SpinSystem:
    """One disorder realization: occupied sites, cluster, offsets, couplings.

    Raises:
        DomainError: If the realization has no occupied sites.
    """
    lattice = config.lattice
    if lattice.sites_nm is not None:
        sites = SiteSet(positions=np.array(lattice.sites_nm, dtype=float))
    else:
        spec = LatticeSpec(
            abundance=lattice.abundance,
            supercell=lattice.supercell,
            lattice_constant_nm=lattice.lattice_constant_nm,
            seed=derive_seed(seed, "lattice"),
        )
        sites = generate_sites(spec)
    if sites.is_empty:
        raise DomainError(f"realization seed {seed}: no occupied sites")

    gamma = gamma_from_config(global_config)
    cluster = select_cluster(
        sites,
        config.cluster.max_spins,
        config.cluster.strategy,
        origin=config.cluster.origin,
        seed=derive_seed(seed, "origin"),
        field_direction=lattice.field_direction,
        gamma=gamma,
    )
    offsets = OffsetModel(
        kind=config.offsets.kind,
        width_hz=config.offsets.width_hz,
        seed=derive_seed(seed, "offsets"),
    )
    return build_spin_system(cluster, config.offsets.carrier_detuning_hz, offsets, gamma)


def noise_model(config: ExperimentConfig, seed: int) -> NoiseModel:
    section = config.noise
    return NoiseModel(
        kind=section.kind,
        correlation_time_s=section.correlation_time_us * US,
        rms_rad_s=2 * math.pi * section.rms_hz,
        n_fluctuators=section.n_fluctuators,
        rate_band_s=section.rate_band_per_s,
        amplitude_rad_s=2 * math.pi * section.amplitude_hz,
        correlated=section.correlated,
        seed=derive_seed(seed, "noise"),
    )


def simulate(config: ExperimentConfig, *, workers: int = 1, global_config: dict | None = None) -> DisorderAverage:
    """Disorder-averaged echo train of the config.

    Sequences without a CPMG preamble start from an ideal pi/2 pulse about x.
    """
    if global_config is None:
        global_config = load_global_config()
    seq = build_sequence(config)
    dt_noise = None if config.noise.dt_noise_us is None else config.noise.dt_noise_us * US

    def realize(seed: int) -> EchoTrain:
        sys = realize_system(config, seed, global_config)
        h_sys = system_hamiltonian(sys, config.max_spins_cap)
        state = thermal_state(sys.n_spins, config.max_spins_cap)
        if not seq.preamble:
            state = state.conjugated(rotation(sys.n_spins, math.pi / 2, 0.0))
        train = evolve(
            state, seq, h_sys, noise_model(config, seed), dt_noise,
            t1_s=config.t1_s, sample_stride=config.sequence.sample_every,
        )
        return replace(train, provenance={**train.provenance, "seed": seed, "system": sys.to_dict()}, final_state=None)

    logger.info(
        "Simulating %s: %d realizations, %s, %d pulses per realization",
        config.name, config.n_realizations, seq.metadata.get("builder"), seq.n_pulses,
    )
    return disorder_average(realize, config.n_realizations, config.seed, workers=workers)


def analyze_train(train: EchoTrain, config: ExperimentConfig) -> dict:
    """Echo amplitudes, noise-floor selection and decay fit of one train.

    Raises:
        AnalysisError: Fewer than 3 amplitudes above the noise floor.
    """
    settings = config.analysis
    method = AmplitudeMethod(settings.method)
    times, amplitudes = analysis.echo_amplitudes(
        train,
        method,
        expected_offset_hz=expected_offset_hz(config) if method is AmplitudeMethod.SIDEPEAK else None,
        zero_padding=settings.zero_padding,
        window_fraction=settings.window_fraction,
    )
    keep = analysis.above_noise_floor(amplitudes, settings.noise_floor_factor)
    if keep.sum() < 3:
        raise AnalysisError(f"only {int(keep.sum())} echo amplitudes above the noise floor")
    fitter = analysis.fit_double_exponential if settings.fit == "double_exp" else analysis.fit_single_exponential
    fit = fitter(times[keep], amplitudes[keep])
    return {"times": times, "amplitudes": amplitudes, "kept": keep, "fit": fit}


def config_for_point(config: ExperimentConfig, axis: ScanAxis | str, value: float) -> ExperimentConfig:
    """Config at one scan grid point.

    cycle_time points set tau_us and scale the cycle count and the sample
    stride by (tau_max / tau)^cycles_scale_exponent; abundance points set p.
    """
    axis = ScanAxis(axis)
    if axis is ScanAxis.ABUNDANCE:
        return replace(config, lattice=replace(config.lattice, abundance=value))

    sequence = replace(config.sequence, tau_us=value)
    exponent = config.scan.cycles_scale_exponent if config.scan else 0.0
    if exponent:
        factor = (max(config.scan.grid) / value) ** exponent
        sequence = replace(sequence, sample_every=max(1, round(sequence.sample_every * factor)))
        if sequence.cpmg is not None:
            sequence = replace(sequence, cpmg=replace(sequence.cpmg, cycles_per_pi=max(1, round(sequence.cpmg.cycles_per_pi * factor))))
        else:
            sequence = replace(sequence, cycles=max(1, round(sequence.cycles * factor)))
    return replace(config, sequence=sequence)


def write_run(out_dir: Path, config: ExperimentConfig, result: DisorderAverage, fit: dict | None) -> None:
    """Echo-train CSV plus metadata sidecar for one simulated point."""
    out_dir = Path(out_dir)
    digest = config.config_hash()
    reports.write_train_csv(out_dir / "echo_train.csv", result.mean, digest)
    metadata = {
        "config": config.to_dict(),
        "sequence": build_sequence(config).to_dict(),
        "realizations": [
            {"index": r["index"], "seed": r["seed"], "success": r["success"], "error": r["error"]}
            for r in result.records
        ],
        "n_failed": result.n_failed,
        "standard_error": result.standard_error(),
        "fit": None if fit is None else fit["fit"].to_dict(),
        "amplitudes": None if fit is None else {
            "times_s": fit["times"], "values": fit["amplitudes"], "kept": fit["kept"],
        },
    }
    reports.write_json(out_dir / "metadata.json", metadata, digest)


def run_point(config: ExperimentConfig, axis, value: float, point_dir: Path | None, workers: int = 1) -> dict:
    """Scan runner: simulate and fit one grid point, returning its table row."""
    point = config_for_point(config, axis, value)
    result = simulate(point, workers=workers)
    fitted = analyze_train(result.mean, point)
    fit = fitted["fit"]
    if point_dir is not None:
        write_run(point_dir, point, result, fitted)

    t2_key = "T2" if "T2" in fit.parameters else "T_b"
    return {
        "success": True,
        "cycle_time_s": build_sequence(point).cycle_time,
        "abundance": point.lattice.abundance,
        "t2_s": fit[t2_key],
        "t2_err_s": fit.uncertainties[t2_key],
        "converged": fit.converged,
        "n_echoes": int(fitted["kept"].sum()),
        "n_failed_realizations": result.n_failed,
    }
