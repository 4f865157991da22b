"""Configuration management for the decoupling simulator.

Two types of config:
1. Global config (config.json) - physical constants, caps and analysis
   defaults in the repository root
2. Experiment config - one JSON document per experiment, every physical
   quantity under a unit-suffixed key (tau_us, detuning_hz, ...)

Experiment documents are validated into frozen records. Any problem raises
ConfigError naming the dotted key path (e.g. ``sequence.tau_us``).
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Self

from lib.errors import SpinSimError

# Environment override for the directory holding config.json
ROOT_ENV_VAR = "SPINSIM_ROOT"

BUILDER_NAMES = ("free", "wahuha", "mrev8", "mrev16")
NOISE_KINDS = ("none", "ou", "rtn_bath")
OFFSET_KINDS = ("none", "uniform", "gaussian")
CLUSTER_STRATEGIES = ("central_nearest", "strongest_coupled")
AMPLITUDE_METHODS = ("sidepeak", "magnitude")
FIT_MODELS = ("single_exp", "double_exp")
SCAN_AXES = ("cycle_time", "abundance")


class ConfigError(SpinSimError):
    """Raised when config is missing or invalid."""

    def __init__(self, message: str, key_path: str | None = None):
        self.key_path = key_path
        super().__init__(f"{key_path}: {message}" if key_path else message)


# =============================================================================
# Global Config (repository-wide settings)
# =============================================================================

def get_root() -> Path:
    """Directory holding config.json: SPINSIM_ROOT or the repository root."""
    return Path(os.environ.get(ROOT_ENV_VAR, Path(__file__).parent.parent.parent))


def load_global_config() -> dict:
    """Load global config from the repository root.

    Returns:
        dict: Parsed configuration

    Raises:
        FileNotFoundError: If config.json doesn't exist
        json.JSONDecodeError: If config.json is malformed
    """
    config_path = get_root() / "config.json"
    return json.loads(config_path.read_text())


# =============================================================================
# Field readers
# =============================================================================

_MISSING = object()


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _check_keys(section: dict, path: str, allowed: set[str]) -> None:
    if not isinstance(section, dict):
        raise ConfigError("expected an object", path or None)
    unknown = sorted(set(section) - allowed - {"_comment"})
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown}", _join(path, unknown[0]))


def _get(section: dict, path: str, key: str, default: Any = _MISSING) -> Any:
    if key in section:
        return section[key]
    if default is _MISSING:
        raise ConfigError("required key is missing", _join(path, key))
    return default


def _number(
    section: dict,
    path: str,
    key: str,
    default: Any = _MISSING,
    *,
    positive: bool = False,
    minimum: float | None = None,
    maximum: float | None = None,
) -> float | None:
    value = _get(section, path, key, default)
    if value is None:
        return None
    where = _join(path, key)
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"expected a finite number, got {value!r}", where)
    if positive and not value > 0:
        raise ConfigError(f"must be > 0, got {value!r}", where)
    if minimum is not None and value < minimum:
        raise ConfigError(f"must be >= {minimum}, got {value!r}", where)
    if maximum is not None and value > maximum:
        raise ConfigError(f"must be <= {maximum}, got {value!r}", where)
    return float(value)


def _integer(section: dict, path: str, key: str, default: Any = _MISSING, *, minimum: int | None = None) -> int:
    value = _get(section, path, key, default)
    where = _join(path, key)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"expected an integer, got {value!r}", where)
    if minimum is not None and value < minimum:
        raise ConfigError(f"must be >= {minimum}, got {value!r}", where)
    return value


def _choice(section: dict, path: str, key: str, choices: tuple[str, ...], default: Any = _MISSING) -> str:
    value = _get(section, path, key, default)
    if value not in choices:
        raise ConfigError(f"must be one of {list(choices)}, got {value!r}", _join(path, key))
    return value


def _boolean(section: dict, path: str, key: str, default: Any = _MISSING) -> bool:
    value = _get(section, path, key, default)
    if not isinstance(value, bool):
        raise ConfigError(f"expected true or false, got {value!r}", _join(path, key))
    return value


def _vector(section: dict, path: str, key: str, length: int | None, default: Any = _MISSING) -> tuple | None:
    value = _get(section, path, key, default)
    if value is None:
        return None
    where = _join(path, key)
    if not isinstance(value, list) or (length is not None and len(value) != length):
        raise ConfigError(f"expected a list of {length or 'some'} numbers", where)
    for i, item in enumerate(value):
        if isinstance(item, bool) or not isinstance(item, (int, float)) or not math.isfinite(item):
            raise ConfigError(f"expected a finite number, got {item!r}", f"{where}[{i}]")
    return tuple(value)


# =============================================================================
# Experiment Config
# =============================================================================

@dataclass(frozen=True, slots=True, kw_only=True)
class LatticeSection:
    abundance: float
    supercell: tuple[int, int, int] = (4, 4, 4)
    lattice_constant_nm: float = 0.5431
    sites_nm: tuple[tuple[float, float, float], ...] | None = None
    field_direction: tuple[float, float, float] = (0.0, 0.0, 1.0)


@dataclass(frozen=True, slots=True, kw_only=True)
class ClusterSection:
    max_spins: int
    strategy: str = "strongest_coupled"
    origin: str | int = "random"


@dataclass(frozen=True, slots=True, kw_only=True)
class OffsetSection:
    carrier_detuning_hz: float = 0.0
    kind: str = "none"
    width_hz: float = 0.0


@dataclass(frozen=True, slots=True, kw_only=True)
class CpmgSection:
    cycles_per_pi: int = 120
    n_pi: int = 1
    excitation_phase_deg: float = 0.0
    pi_amplitude_error: float = 0.0
    convention: str = "cpmg"


@dataclass(frozen=True, slots=True, kw_only=True)
class SequenceSection:
    builder: str
    tau_us: float
    pulse_width_us: float = 0.0
    helicity: str = "+"
    sample_position: str = "end"
    cycles: int = 1
    sample_every: int = 1
    cpmg: CpmgSection | None = None


@dataclass(frozen=True, slots=True, kw_only=True)
class NoiseSection:
    kind: str = "none"
    correlation_time_us: float = 0.0
    rms_hz: float = 0.0
    n_fluctuators: int = 0
    rate_band_per_s: tuple[float, float] = (1.0, 1.0)
    amplitude_hz: float = 0.0
    correlated: bool = False
    dt_noise_us: float | None = None


@dataclass(frozen=True, slots=True, kw_only=True)
class AnalysisSection:
    method: str = "sidepeak"
    expected_offset_hz: float | None = None
    zero_padding: int = 4
    noise_floor_factor: float = 3.0
    window_fraction: float = 0.5
    fit: str = "single_exp"


@dataclass(frozen=True, slots=True, kw_only=True)
class ScanSection:
    axis: str
    grid: tuple[float, ...]
    cycles_scale_exponent: float = 0.0


@dataclass(frozen=True, slots=True, kw_only=True)
class ExperimentConfig:
    """A validated experiment document."""

    name: str
    lattice: LatticeSection
    cluster: ClusterSection
    offsets: OffsetSection
    sequence: SequenceSection
    noise: NoiseSection = field(default_factory=NoiseSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)
    scan: ScanSection | None = None
    n_realizations: int = 1
    seed: int = 0
    t1_s: float | None = None
    output_dir: str = "runs"
    max_spins_cap: int = 14

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        """SHA-256 of the canonical (sorted-key, compact) JSON of the parsed config."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()

    def with_overrides(self, *, seed: int | None = None, output_dir: str | None = None) -> Self:
        changes = {}
        if seed is not None:
            changes["seed"] = seed
        if output_dir is not None:
            changes["output_dir"] = output_dir
        return replace(self, **changes)


def _parse_lattice(raw: dict, defaults: dict) -> LatticeSection:
    path = "lattice"
    _check_keys(raw, path, {"abundance", "supercell", "lattice_constant_nm", "sites_nm", "field_direction"})
    sites = _get(raw, path, "sites_nm", None)
    if sites is not None:
        if not isinstance(sites, list) or not sites:
            raise ConfigError("expected a non-empty list of [x, y, z] positions", "lattice.sites_nm")
        sites = tuple(_vector({f"sites_nm[{i}]": s}, path, f"sites_nm[{i}]", 3) for i, s in enumerate(sites))
    supercell = _vector(raw, path, "supercell", 3, [4, 4, 4])
    if any(int(n) != n or n < 1 for n in supercell):
        raise ConfigError("expected three positive integers", "lattice.supercell")
    direction = _vector(raw, path, "field_direction", 3, [0.0, 0.0, 1.0])
    norm = math.sqrt(sum(c * c for c in direction))
    if norm == 0:
        raise ConfigError("field direction must be nonzero", "lattice.field_direction")
    return LatticeSection(
        abundance=_number(raw, path, "abundance", 1.0 if sites is not None else _MISSING, minimum=0.0, maximum=1.0),
        supercell=tuple(int(n) for n in supercell),
        lattice_constant_nm=_number(raw, path, "lattice_constant_nm", defaults.get("lattice_constant_nm", 0.5431), positive=True),
        sites_nm=sites,
        field_direction=tuple(c / norm for c in direction),
    )


def _parse_cluster(raw: dict, cap: int) -> ClusterSection:
    path = "cluster"
    _check_keys(raw, path, {"max_spins", "strategy", "origin"})
    max_spins = _integer(raw, path, "max_spins", minimum=1)
    if max_spins > cap:
        raise ConfigError(f"exceeds the dense-matrix cap of {cap} spins", "cluster.max_spins")
    origin = _get(raw, path, "origin", "random")
    if not (origin in ("random", "centroid") or (isinstance(origin, int) and not isinstance(origin, bool) and origin >= 0)):
        raise ConfigError(f"must be 'random', 'centroid' or a site index, got {origin!r}", "cluster.origin")
    return ClusterSection(
        max_spins=max_spins,
        strategy=_choice(raw, path, "strategy", CLUSTER_STRATEGIES, "strongest_coupled"),
        origin=origin,
    )


def _parse_offsets(raw: dict) -> OffsetSection:
    path = "offsets"
    _check_keys(raw, path, {"carrier_detuning_hz", "kind", "width_hz"})
    return OffsetSection(
        carrier_detuning_hz=_number(raw, path, "carrier_detuning_hz", 0.0),
        kind=_choice(raw, path, "kind", OFFSET_KINDS, "none"),
        width_hz=_number(raw, path, "width_hz", 0.0, minimum=0.0),
    )


def _parse_sequence(raw: dict) -> SequenceSection:
    path = "sequence"
    _check_keys(raw, path, {"builder", "tau_us", "pulse_width_us", "helicity", "sample_position", "cycles", "sample_every", "cpmg"})
    tau = _number(raw, path, "tau_us", positive=True)
    width = _number(raw, path, "pulse_width_us", 0.0, minimum=0.0)
    if width >= tau:
        raise ConfigError(f"must be smaller than tau_us ({tau})", "sequence.pulse_width_us")

    cpmg = None
    raw_cpmg = _get(raw, path, "cpmg", None)
    if raw_cpmg is not None:
        cpath = "sequence.cpmg"
        _check_keys(raw_cpmg, cpath, {"cycles_per_pi", "n_pi", "excitation_phase_deg", "pi_amplitude_error", "convention"})
        cpmg = CpmgSection(
            cycles_per_pi=_integer(raw_cpmg, cpath, "cycles_per_pi", 120, minimum=1),
            n_pi=_integer(raw_cpmg, cpath, "n_pi", 1, minimum=1),
            excitation_phase_deg=_number(raw_cpmg, cpath, "excitation_phase_deg", 0.0),
            pi_amplitude_error=_number(raw_cpmg, cpath, "pi_amplitude_error", 0.0, minimum=-1.0, maximum=1.0),
            convention=_choice(raw_cpmg, cpath, "convention", ("cpmg", "cp"), "cpmg"),
        )
    return SequenceSection(
        builder=_choice(raw, path, "builder", BUILDER_NAMES),
        tau_us=tau,
        pulse_width_us=width,
        helicity=_choice(raw, path, "helicity", ("+", "-"), "+"),
        sample_position=_choice(raw, path, "sample_position", ("end", "mid"), "end"),
        cycles=_integer(raw, path, "cycles", 1, minimum=1),
        sample_every=_integer(raw, path, "sample_every", 1, minimum=1),
        cpmg=cpmg,
    )


def _parse_noise(raw: dict) -> NoiseSection:
    path = "noise"
    _check_keys(raw, path, {
        "kind", "correlation_time_us", "rms_hz", "n_fluctuators", "rate_band_per_s",
        "amplitude_hz", "correlated", "dt_noise_us",
    })
    kind = _choice(raw, path, "kind", NOISE_KINDS, "none")
    section = NoiseSection(
        kind=kind,
        correlation_time_us=_number(raw, path, "correlation_time_us", 0.0, minimum=0.0),
        rms_hz=_number(raw, path, "rms_hz", 0.0, minimum=0.0),
        n_fluctuators=_integer(raw, path, "n_fluctuators", 0, minimum=0),
        rate_band_per_s=_vector(raw, path, "rate_band_per_s", 2, [1.0, 1.0]),
        amplitude_hz=_number(raw, path, "amplitude_hz", 0.0, minimum=0.0),
        correlated=_boolean(raw, path, "correlated", False),
        dt_noise_us=_number(raw, path, "dt_noise_us", None, positive=True),
    )
    if kind == "none":
        return section
    if section.dt_noise_us is None:
        raise ConfigError("required when noise is active", "noise.dt_noise_us")
    if kind == "ou" and not section.correlation_time_us > 0:
        raise ConfigError("must be > 0 for ou noise", "noise.correlation_time_us")
    if kind == "rtn_bath":
        low, high = section.rate_band_per_s
        if not 0 < low <= high:
            raise ConfigError("must be an ordered pair of positive rates", "noise.rate_band_per_s")
        if section.n_fluctuators < 1:
            raise ConfigError("must be >= 1 for rtn_bath noise", "noise.n_fluctuators")
    return section


def _parse_analysis(raw: dict, defaults: dict) -> AnalysisSection:
    path = "analysis"
    _check_keys(raw, path, {"method", "expected_offset_hz", "zero_padding", "noise_floor_factor", "window_fraction", "fit"})
    return AnalysisSection(
        method=_choice(raw, path, "method", AMPLITUDE_METHODS, "sidepeak"),
        expected_offset_hz=_number(raw, path, "expected_offset_hz", None),
        zero_padding=_integer(raw, path, "zero_padding", defaults.get("zero_padding", 4), minimum=1),
        noise_floor_factor=_number(raw, path, "noise_floor_factor", defaults.get("noise_floor_factor", 3.0), minimum=0.0),
        window_fraction=_number(raw, path, "window_fraction", defaults.get("sidepeak_window_fraction", 0.5), positive=True),
        fit=_choice(raw, path, "fit", FIT_MODELS, "single_exp"),
    )


def _parse_scan(raw: dict) -> ScanSection:
    path = "scan"
    _check_keys(raw, path, {"axis", "grid", "cycles_scale_exponent"})
    axis = _choice(raw, path, "axis", SCAN_AXES)
    grid = _vector(raw, path, "grid", None)
    if len(grid) < 3:
        raise ConfigError(f"needs at least 3 points, got {len(grid)}", "scan.grid")
    if len(set(grid)) != len(grid):
        raise ConfigError("grid values must be distinct", "scan.grid")
    for i, value in enumerate(grid):
        if not value > 0 or (axis == "abundance" and value > 1):
            raise ConfigError(f"invalid {axis} value {value!r}", f"scan.grid[{i}]")
    return ScanSection(
        axis=axis,
        grid=grid,
        cycles_scale_exponent=_number(raw, path, "cycles_scale_exponent", 0.0, minimum=0.0),
    )


EXPERIMENT_KEYS = {
    "name", "lattice", "cluster", "offsets", "sequence", "noise", "analysis",
    "scan", "n_realizations", "seed", "t1_s", "output_dir",
}


def parse_experiment_config(document: dict, global_config: dict | None = None) -> ExperimentConfig:
    """Validate an experiment document.

    Args:
        document: Parsed JSON document
        global_config: Defaults source; load_global_config() when None

    Raises:
        ConfigError: On any schema violation, naming the key path
    """
    if global_config is None:
        global_config = load_global_config()
    _check_keys(document, "", EXPERIMENT_KEYS)

    physics = global_config.get("physics", {})
    cap = global_config.get("limits", {}).get("max_spins", 14)
    scan = _get(document, "", "scan", None)
    name = _get(document, "", "name", "experiment")
    if not isinstance(name, str) or not name:
        raise ConfigError("expected a non-empty string", "name")
    output_dir = _get(document, "", "output_dir", f"runs/{name}")
    if not isinstance(output_dir, str):
        raise ConfigError("expected a path string", "output_dir")

    return ExperimentConfig(
        name=name,
        lattice=_parse_lattice(_get(document, "", "lattice"), physics),
        cluster=_parse_cluster(_get(document, "", "cluster"), cap),
        offsets=_parse_offsets(_get(document, "", "offsets", {})),
        sequence=_parse_sequence(_get(document, "", "sequence")),
        noise=_parse_noise(_get(document, "", "noise", {})),
        analysis=_parse_analysis(_get(document, "", "analysis", {}), global_config.get("analysis", {})),
        scan=None if scan is None else _parse_scan(scan),
        n_realizations=_integer(document, "", "n_realizations", 1, minimum=1),
        seed=_integer(document, "", "seed", 0, minimum=0),
        t1_s=_number(document, "", "t1_s", None, positive=True),
        output_dir=output_dir,
        max_spins_cap=cap,
    )


def load_experiment_config(path: Path, global_config: dict | None = None) -> ExperimentConfig:
    """Read and validate an experiment config file.

    Raises:
        ConfigError: If the file is missing, malformed or invalid
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Experiment config not found: {path}")
    try:
        document = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"Invalid JSON in experiment config: {e}")
    return parse_experiment_config(document, global_config)
