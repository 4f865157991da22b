"""Diluted 29Si lattices and their secular dipolar couplings.

Sites live on the diamond-cubic lattice (8 atoms per conventional cell).
Every site is occupied by a spin-1/2 29Si nucleus independently with
probability p; a finite cluster is then cut out of the occupied set and
turned into a SpinSystem (offsets + coupling matrix, both in rad/s).

Units: positions in nm, angular frequencies in rad/s, gamma in rad s^-1 T^-1.
Clusters are open (no periodic images).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import StrEnum
from typing import Self

import numpy as np
from scipy import constants

from lib.errors import DomainError

logger = logging.getLogger(__name__)

# Silicon conventional cell edge, nm
DEFAULT_LATTICE_CONSTANT_NM = 0.5431

# 29Si gyromagnetic ratio, rad s^-1 T^-1 (gamma/2pi = -8.465 MHz/T)
GAMMA_SI29 = 2 * math.pi * -8.465e6

# mu0/4pi restores SI units in the CGS coupling formula
MU0_OVER_4PI = constants.mu_0 / (4 * math.pi)

NM = 1e-9

# Fractional coordinates of the 8 diamond-cubic basis atoms
DIAMOND_BASIS = np.array([
    [0.00, 0.00, 0.00],
    [0.00, 0.50, 0.50],
    [0.50, 0.00, 0.50],
    [0.50, 0.50, 0.00],
    [0.25, 0.25, 0.25],
    [0.25, 0.75, 0.75],
    [0.75, 0.25, 0.75],
    [0.75, 0.75, 0.25],
])

DEFAULT_FIELD_DIRECTION = (0.0, 0.0, 1.0)


class ClusterStrategy(StrEnum):
    """Rule for cutting a finite cluster out of the occupied sites."""

    CENTRAL_NEAREST = "central_nearest"
    STRONGEST_COUPLED = "strongest_coupled"


class OffsetKind(StrEnum):
    """Distribution of per-spin frequency offsets around the carrier detuning."""

    NONE = "none"
    UNIFORM = "uniform"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True, slots=True, kw_only=True)
class LatticeSpec:
    """Dilution parameters for one random lattice realization."""

    abundance: float
    supercell: tuple[int, int, int] = (4, 4, 4)
    lattice_constant_nm: float = DEFAULT_LATTICE_CONSTANT_NM
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.abundance <= 1.0:
            raise DomainError(f"abundance must be in [0, 1], got {self.abundance}")
        if len(self.supercell) != 3 or any(int(n) < 1 for n in self.supercell):
            raise DomainError(f"supercell counts must be three integers >= 1, got {self.supercell}")
        if not self.lattice_constant_nm > 0:
            raise DomainError(f"lattice_constant_nm must be > 0, got {self.lattice_constant_nm}")

    @property
    def n_sites(self) -> int:
        nx, ny, nz = self.supercell
        return len(DIAMOND_BASIS) * nx * ny * nz

    def to_dict(self) -> dict:
        return {
            "abundance": self.abundance,
            "supercell": list(self.supercell),
            "lattice_constant_nm": self.lattice_constant_nm,
            "seed": self.seed,
        }


@dataclass(frozen=True, slots=True, kw_only=True)
class SiteSet:
    """Occupied lattice positions (nm) of one realization."""

    positions: np.ndarray
    spec: LatticeSpec | None = None

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def is_empty(self) -> bool:
        return len(self.positions) == 0


@dataclass(frozen=True, slots=True, kw_only=True)
class SpinConfiguration:
    """Positions of the spins kept in a cluster plus the static field direction."""

    positions: np.ndarray
    field_direction: tuple[float, float, float] = DEFAULT_FIELD_DIRECTION
    origin_site_index: int | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "positions", positions)
        direction = np.asarray(self.field_direction, dtype=float)
        object.__setattr__(self, "field_direction", tuple(float(c) for c in direction))
        if abs(np.linalg.norm(direction) - 1.0) > 1e-12:
            raise DomainError(f"field_direction must be a unit vector, got {self.field_direction}")
        if len(positions) > 1:
            _, counts = np.unique(positions, axis=0, return_counts=True)
            if np.any(counts > 1):
                raise DomainError("spin positions must be distinct")

    @property
    def n_spins(self) -> int:
        return len(self.positions)


@dataclass(frozen=True, slots=True, kw_only=True)
class OffsetModel:
    """Inhomogeneous offset distribution; width_hz is the full width (uniform) or std (gaussian)."""

    kind: OffsetKind = OffsetKind.NONE
    width_hz: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", OffsetKind(self.kind))
        if self.width_hz < 0:
            raise DomainError(f"offset width_hz must be >= 0, got {self.width_hz}")

    def draw(self, n_spins: int) -> np.ndarray:
        """Per-spin offset deviations in rad/s."""
        rng = np.random.default_rng(self.seed)
        match self.kind:
            case OffsetKind.NONE:
                deviations_hz = np.zeros(n_spins)
            case OffsetKind.UNIFORM:
                deviations_hz = rng.uniform(-self.width_hz / 2, self.width_hz / 2, size=n_spins)
            case OffsetKind.GAUSSIAN:
                deviations_hz = rng.normal(0.0, self.width_hz, size=n_spins)
        return 2 * math.pi * deviations_hz


@dataclass(frozen=True, slots=True, kw_only=True)
class SpinSystem:
    """Offsets and couplings of one cluster, ready for Hamiltonian construction."""

    offsets: np.ndarray
    couplings: np.ndarray
    positions: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        offsets = np.asarray(self.offsets, dtype=float).reshape(-1)
        couplings = np.asarray(self.couplings, dtype=float)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "couplings", couplings)
        n = len(offsets)
        if n < 1:
            raise DomainError("a spin system needs at least one spin")
        if couplings.shape != (n, n):
            raise DomainError(f"coupling matrix shape {couplings.shape} does not match {n} spins")
        if not np.array_equal(couplings, couplings.T):
            raise DomainError("coupling matrix must be symmetric")
        if np.any(np.diag(couplings) != 0):
            raise DomainError("coupling matrix must have a zero diagonal")

    @property
    def n_spins(self) -> int:
        return len(self.offsets)

    def scaled(self, offset_scale: float = 1.0, coupling_scale: float = 1.0) -> Self:
        """Copy with offsets and couplings multiplied by the given factors."""
        return type(self)(
            offsets=self.offsets * offset_scale,
            couplings=self.couplings * coupling_scale,
            positions=self.positions,
            provenance=dict(self.provenance),
        )

    def to_dict(self) -> dict:
        """JSON-ready document: positions nm, offsets and couplings rad/s."""
        return {
            "n_spins": self.n_spins,
            "positions_nm": None if self.positions is None else self.positions.tolist(),
            "offsets_rad_s": self.offsets.tolist(),
            "couplings_rad_s": self.couplings.tolist(),
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data: dict) -> Self:
        positions = data.get("positions_nm")
        return cls(
            offsets=np.array(data["offsets_rad_s"], dtype=float),
            couplings=np.array(data["couplings_rad_s"], dtype=float),
            positions=None if positions is None else np.array(positions, dtype=float),
            provenance=data.get("provenance", {}),
        )


def generate_sites(spec: LatticeSpec) -> SiteSet:
    """Occupy each diamond-cubic site of the supercell with probability p.

    Site order is fixed (cell-major, then basis atom), so a given
    (spec, seed) always returns the same positions. Zero occupied sites is
    a valid, empty result.
    """
    nx, ny, nz = spec.supercell
    cells = np.array(
        [(i, j, k) for i in range(nx) for j in range(ny) for k in range(nz)],
        dtype=float,
    )
    fractional = (cells[:, None, :] + DIAMOND_BASIS[None, :, :]).reshape(-1, 3)
    all_sites = fractional * spec.lattice_constant_nm

    rng = np.random.default_rng(spec.seed)
    occupied = rng.random(len(all_sites)) < spec.abundance
    positions = all_sites[occupied]
    logger.debug(
        "Occupied %d of %d sites (p=%s, seed=%s)",
        len(positions), len(all_sites), spec.abundance, spec.seed,
    )
    return SiteSet(positions=positions, spec=spec)


def dipolar_coupling(
    r_j,
    r_k,
    field_direction=DEFAULT_FIELD_DIRECTION,
    gamma: float = GAMMA_SI29,
) -> float:
    """Secular dipolar coupling d_jk in rad/s between two spins at r_j, r_k (nm).

    d_jk = (mu0/4pi) * hbar * gamma^2 * (1 - 3 cos^2 theta) / (2 r^3),
    with cos theta = (r_j - r_k) . field_direction / r.

    Raises:
        DomainError: If the positions coincide.
    """
    separation = (np.asarray(r_j, dtype=float) - np.asarray(r_k, dtype=float)) * NM
    r = float(np.linalg.norm(separation))
    if r == 0.0:
        raise DomainError("dipolar coupling undefined for coincident positions")
    cos_theta = float(np.dot(separation, np.asarray(field_direction, dtype=float))) / r
    return MU0_OVER_4PI * constants.hbar * gamma**2 * (1.0 - 3.0 * cos_theta**2) / (2.0 * r**3)


def coupling_matrix(
    positions: np.ndarray,
    field_direction=DEFAULT_FIELD_DIRECTION,
    gamma: float = GAMMA_SI29,
) -> np.ndarray:
    """Symmetric zero-diagonal matrix of pairwise dipolar_coupling values."""
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    n = len(positions)
    couplings = np.zeros((n, n))
    for j in range(n):
        for k in range(j + 1, n):
            d = dipolar_coupling(positions[j], positions[k], field_direction, gamma)
            couplings[j, k] = d
            couplings[k, j] = d
    return couplings


def _pick_origin(sites: SiteSet, origin, seed: int) -> int:
    if isinstance(origin, (int, np.integer)) and not isinstance(origin, bool):
        if not 0 <= origin < len(sites):
            raise DomainError(f"origin index {origin} out of range for {len(sites)} sites")
        return int(origin)
    if origin == "centroid":
        centroid = sites.positions.mean(axis=0)
        distances = np.linalg.norm(sites.positions - centroid, axis=1)
        return int(np.argsort(distances, kind="stable")[0])
    if origin == "random":
        return int(np.random.default_rng(seed).integers(len(sites)))
    raise DomainError(f"unknown cluster origin {origin!r}")


def select_cluster(
    sites: SiteSet,
    max_spins: int,
    strategy: ClusterStrategy | str = ClusterStrategy.CENTRAL_NEAREST,
    *,
    origin: int | str = "random",
    seed: int | None = None,
    field_direction=DEFAULT_FIELD_DIRECTION,
    gamma: float = GAMMA_SI29,
) -> SpinConfiguration:
    """Cut at most max_spins spins out of the occupied sites.

    The origin spin is a randomly chosen occupied site (``origin="random"``,
    seeded by ``seed`` or the lattice seed), the site nearest the centroid
    (``"centroid"``), or an explicit index. central_nearest keeps the sites
    closest to the origin; strongest_coupled keeps those with the largest
    |d| to it. The origin is always position 0 of the result.

    Returns:
        SpinConfiguration whose metadata records strategy, origin and whether
        fewer sites than requested were available (``undersized``).
    """
    if max_spins < 1:
        raise DomainError(f"max_spins must be >= 1, got {max_spins}")
    strategy = ClusterStrategy(strategy)

    metadata = {
        "strategy": strategy.value,
        "requested_spins": max_spins,
        "available_sites": len(sites),
        "undersized": len(sites) < max_spins,
        "truncated": len(sites) > max_spins,
    }
    if sites.is_empty:
        metadata["origin_lattice_index"] = None
        return SpinConfiguration(
            positions=np.zeros((0, 3)), field_direction=field_direction, metadata=metadata
        )

    if seed is None:
        seed = sites.spec.seed if sites.spec is not None else 0
    origin_index = _pick_origin(sites, origin, seed)
    origin_position = sites.positions[origin_index]
    others = np.array([i for i in range(len(sites)) if i != origin_index], dtype=int)

    if len(others) == 0:
        chosen = np.array([], dtype=int)
    elif strategy is ClusterStrategy.CENTRAL_NEAREST:
        distances = np.linalg.norm(sites.positions[others] - origin_position, axis=1)
        chosen = others[np.argsort(distances, kind="stable")[: max_spins - 1]]
    else:
        strengths = np.array([
            abs(dipolar_coupling(origin_position, sites.positions[i], field_direction, gamma))
            for i in others
        ])
        chosen = others[np.argsort(-strengths, kind="stable")[: max_spins - 1]]

    kept = np.concatenate([[origin_index], chosen]).astype(int)
    metadata["origin_lattice_index"] = origin_index
    metadata["lattice_indices"] = kept.tolist()
    return SpinConfiguration(
        positions=sites.positions[kept],
        field_direction=field_direction,
        origin_site_index=0,
        metadata=metadata,
    )


def build_spin_system(
    config: SpinConfiguration,
    carrier_detuning_hz: float = 0.0,
    inhomogeneity: OffsetModel | None = None,
    gamma: float = GAMMA_SI29,
) -> SpinSystem:
    """Offsets omega_j = 2pi * detuning + delta_j and pairwise couplings for a cluster."""
    if config.n_spins < 1:
        raise DomainError("cannot build a spin system from an empty cluster")
    inhomogeneity = inhomogeneity or OffsetModel()

    offsets = 2 * math.pi * carrier_detuning_hz + inhomogeneity.draw(config.n_spins)
    couplings = coupling_matrix(config.positions, config.field_direction, gamma)
    provenance = {
        "carrier_detuning_hz": carrier_detuning_hz,
        "offset_model": {
            "kind": inhomogeneity.kind.value,
            "width_hz": inhomogeneity.width_hz,
            "seed": inhomogeneity.seed,
        },
        "gamma_rad_s_t": gamma,
        "field_direction": list(config.field_direction),
        "cluster": config.metadata,
    }
    return SpinSystem(
        offsets=offsets,
        couplings=couplings,
        positions=config.positions,
        provenance=provenance,
    )
