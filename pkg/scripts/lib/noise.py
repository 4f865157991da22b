"""Classical dephasing noise on the spin offsets.

Paths are per-spin offset deviations in rad/s on a uniform grid of step dt,
held constant within each step by the engine.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from enum import StrEnum
from typing import Self

import numpy as np
from scipy import signal

from lib.errors import DomainError

logger = logging.getLogger(__name__)

# dt must resolve the fastest noise timescale by this factor
RESOLUTION_FACTOR = 0.1


class NoiseKind(StrEnum):
    NONE = "none"
    OU = "ou"
    RTN_BATH = "rtn_bath"


@dataclass(frozen=True, slots=True, kw_only=True)
class NoiseModel:
    """Offset noise: Ornstein-Uhlenbeck or a bath of random telegraph fluctuators.

    rtn_bath: each spin sees n_fluctuators symmetric two-state processes of
    amplitude +-amplitude_rad_s, switching rates drawn log-uniformly from
    rate_band_s (s^-1). A fluctuator with rate g has autocorrelation
    amplitude^2 exp(-2 g |t|).
    """

    kind: NoiseKind = NoiseKind.NONE
    correlation_time_s: float = 0.0
    rms_rad_s: float = 0.0
    n_fluctuators: int = 0
    rate_band_s: tuple[float, float] = (1.0, 1.0)
    amplitude_rad_s: float = 0.0
    correlated: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        object.__setattr__(self, "rate_band_s", tuple(float(r) for r in self.rate_band_s))
        match self.kind:
            case NoiseKind.OU:
                if not self.correlation_time_s > 0:
                    raise DomainError(f"ou correlation_time_s must be > 0, got {self.correlation_time_s}")
                if self.rms_rad_s < 0:
                    raise DomainError(f"ou rms_rad_s must be >= 0, got {self.rms_rad_s}")
            case NoiseKind.RTN_BATH:
                low, high = self.rate_band_s
                if self.n_fluctuators < 1:
                    raise DomainError(f"rtn_bath needs n_fluctuators >= 1, got {self.n_fluctuators}")
                if not 0 < low <= high:
                    raise DomainError(f"rate_band_s must be ordered and positive, got {self.rate_band_s}")
                if self.amplitude_rad_s < 0:
                    raise DomainError(f"amplitude_rad_s must be >= 0, got {self.amplitude_rad_s}")

    @property
    def active(self) -> bool:
        return self.kind is not NoiseKind.NONE

    @property
    def max_dt(self) -> float:
        """Largest step that resolves the fastest noise timescale."""
        match self.kind:
            case NoiseKind.OU:
                return RESOLUTION_FACTOR * self.correlation_time_s
            case NoiseKind.RTN_BATH:
                return RESOLUTION_FACTOR / self.rate_band_s[1]
        return math.inf

    def with_seed(self, seed: int) -> Self:
        return replace(self, seed=seed)

    def to_dict(self) -> dict:
        data = {"kind": self.kind.value, "seed": self.seed, "correlated": self.correlated}
        match self.kind:
            case NoiseKind.OU:
                data |= {"correlation_time_s": self.correlation_time_s, "rms_rad_s": self.rms_rad_s}
            case NoiseKind.RTN_BATH:
                data |= {
                    "n_fluctuators": self.n_fluctuators,
                    "rate_band_s": list(self.rate_band_s),
                    "amplitude_rad_s": self.amplitude_rad_s,
                }
        return data


def _n_steps(duration: float, dt: float) -> int:
    return max(1, math.ceil(duration / dt - 1e-9))


def _ou_path(model: NoiseModel, n_steps: int, dt: float, rng: np.random.Generator) -> np.ndarray:
    # Exact AR(1) discretization of the stationary process
    rho = math.exp(-dt / model.correlation_time_s)
    drive = rng.standard_normal(n_steps) * model.rms_rad_s * math.sqrt(1 - rho * rho)
    drive[0] = rng.standard_normal() * model.rms_rad_s
    return signal.lfilter([1.0], [1.0, -rho], drive)


def _rtn_path(model: NoiseModel, n_steps: int, dt: float, rng: np.random.Generator) -> np.ndarray:
    low, high = model.rate_band_s
    rates = np.exp(rng.uniform(math.log(low), math.log(high), size=model.n_fluctuators))
    flip_probability = 0.5 * (1 - np.exp(-2 * rates * dt))
    initial = rng.choice([-1.0, 1.0], size=model.n_fluctuators)
    flips = rng.random((model.n_fluctuators, n_steps)) < flip_probability[:, None]
    flips[:, 0] = False
    parity = np.cumsum(flips, axis=1) & 1
    states = initial[:, None] * (1.0 - 2.0 * parity)
    return model.amplitude_rad_s * states.sum(axis=0)


def sample_noise_path(model: NoiseModel, duration: float, dt: float, n_spins: int = 1) -> np.ndarray:
    """Seeded offset-noise path, shape (n_spins, n_steps), rad/s.

    Spins get independent streams unless the model is correlated, in which
    case every spin carries the same path.

    Raises:
        DomainError: If the model is inactive or duration/dt are not positive.
    """
    if not model.active:
        raise DomainError("cannot sample a path from a noise model of kind 'none'")
    if not duration > 0 or not dt > 0:
        raise DomainError(f"duration and dt must be > 0, got {duration}, {dt}")
    if n_spins < 1:
        raise DomainError(f"n_spins must be >= 1, got {n_spins}")

    n_steps = _n_steps(duration, dt)
    sampler = _ou_path if model.kind is NoiseKind.OU else _rtn_path
    streams = 1 if model.correlated else n_spins
    paths = np.array([
        sampler(model, n_steps, dt, np.random.default_rng([model.seed, spin]))
        for spin in range(streams)
    ])
    if model.correlated:
        paths = np.repeat(paths, n_spins, axis=0)
    logger.debug("Sampled %s noise: %d spins x %d steps (dt=%g s)", model.kind, n_spins, n_steps, dt)
    return paths
