"""Exact piecewise-constant propagation of a deviation state through a pulse sequence.

Every window (delay or finite pulse) evolves the state under a constant
Hamiltonian, rho -> U rho U^dagger with U = exp(-i H t). Delta pulses are
applied as instantaneous global rotations. Without noise the propagator of
each distinct window is built once from a Hermitian eigendecomposition and
reused for every cycle.

With noise the offsets are frozen on a dt_noise grid, so windows are split
at grid boundaries. Systems without couplings take a diagonal fast path in
which free windows only accumulate phase.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from typing import Self

import numpy as np
from scipy import linalg

from lib.errors import DomainError, NumericalError
from lib.noise import NoiseModel, sample_noise_path
from lib.sequences import EventKind, PulseEvent, PulseSequence
from lib.spinops import (
    DeviationState,
    HermitianOperator,
    _raised_pairs,
    rf_hamiltonian,
    rotation,
    spin_z_values,
    transverse_signal,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True, kw_only=True)
class EchoTrain:
    """Sampled complex transverse magnetization.

    segment_index[i] counts the refocusing pulses applied before sample i.
    """

    times: np.ndarray
    values: np.ndarray
    segment_index: np.ndarray
    provenance: dict = field(default_factory=dict)
    final_state: DeviationState | None = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        values = np.asarray(self.values, dtype=complex).reshape(-1)
        segments = np.asarray(self.segment_index, dtype=int).reshape(-1)
        if not len(times) == len(values) == len(segments):
            raise DomainError("times, values and segment_index must have equal length")
        if len(times) > 1 and np.any(np.diff(times) <= 0):
            raise DomainError("echo train times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "segment_index", segments)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def magnitudes(self) -> np.ndarray:
        return np.abs(self.values)

    @property
    def segment_boundaries(self) -> list[int]:
        """Sample indices at which a new refocusing segment starts."""
        return [int(i) for i in np.flatnonzero(np.diff(self.segment_index)) + 1]

    def segments(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """(times, values) of every segment, in order."""
        return [
            (self.times[self.segment_index == k], self.values[self.segment_index == k])
            for k in np.unique(self.segment_index)
        ]

    def scaled(self, factor: complex) -> Self:
        return replace(self, values=self.values * factor)

    @classmethod
    def mean(cls, trains: Sequence[EchoTrain], provenance: dict | None = None) -> Self:
        """Sample-wise average of trains recorded on the same time grid."""
        if not trains:
            raise NumericalError("cannot average an empty set of echo trains")
        reference = trains[0]
        for train in trains[1:]:
            if len(train) != len(reference) or not np.allclose(train.times, reference.times, rtol=1e-12, atol=0):
                raise NumericalError("echo trains were recorded on different time grids")
        values = np.mean([train.values for train in trains], axis=0)
        return cls(
            times=reference.times,
            values=values,
            segment_index=reference.segment_index,
            provenance=provenance if provenance is not None else dict(reference.provenance),
        )


# =============================================================================
# Propagators
# =============================================================================

class _Propagators:
    """Window propagators for one system Hamiltonian, cached by event parameters."""

    def __init__(self, h_sys: HermitianOperator, cache: bool = True):
        self.h_sys = h_sys
        self.n_spins = h_sys.n_spins
        self.cache = cache
        self._store: dict[tuple, np.ndarray] = {}
        self._eig: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}

    def _hamiltonian(self, event: PulseEvent) -> np.ndarray:
        if event.kind is EventKind.PULSE:
            return self.h_sys.matrix + rf_hamiltonian(self.n_spins, event.rabi, event.phase).matrix
        return self.h_sys.matrix

    def _spectral(self, key: tuple, hamiltonian: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if key not in self._eig:
            self._eig[key] = linalg.eigh(hamiltonian)
        return self._eig[key]

    def window(self, event: PulseEvent) -> np.ndarray:
        if event.kind is EventKind.PULSE and event.duration == 0:
            if not self.cache:
                return rotation(self.n_spins, event.angle, event.phase)
            key = ("rotation", event.angle, event.phase)
            if key not in self._store:
                self._store[key] = rotation(self.n_spins, event.angle, event.phase)
            return self._store[key]

        hamiltonian = self._hamiltonian(event)
        if not self.cache:
            return linalg.expm(-1j * hamiltonian * event.duration)
        key = (event.kind, event.rabi, event.phase if event.kind is EventKind.PULSE else 0.0, event.duration)
        if key not in self._store:
            energies, vectors = self._spectral(key[:3], hamiltonian)
            self._store[key] = (vectors * np.exp(-1j * energies * event.duration)) @ vectors.conj().T
        return self._store[key]

    def product(self, events: Iterable[PulseEvent]) -> np.ndarray:
        unitary = np.eye(self.h_sys.dim, dtype=complex)
        for event in events:
            if event.kind is not EventKind.SAMPLE:
                unitary = self.window(event) @ unitary
        return unitary


def _split_at_samples(events: Sequence[PulseEvent]) -> list[tuple[list[PulseEvent], bool]]:
    """Runs of non-sample events, each flagged with whether a sample follows it."""
    runs: list[tuple[list[PulseEvent], bool]] = []
    current: list[PulseEvent] = []
    for event in events:
        if event.kind is EventKind.SAMPLE:
            runs.append((current, True))
            current = []
        else:
            current.append(event)
    if current:
        runs.append((current, False))
    return runs


class _Recorder:
    def __init__(self, t1_s: float | None, stride: int = 1):
        self.stride = stride
        self.times: list[float] = []
        self.values: list[complex] = []
        self.segments: list[int] = []
        self.segment = 0
        self.t1_s = t1_s

    def damp(self, rho: np.ndarray, elapsed: float) -> np.ndarray:
        if self.t1_s is None or elapsed == 0:
            return rho
        return rho * math.exp(-elapsed / self.t1_s)

    def wants(self, cycle: int) -> bool:
        return (cycle + 1) % self.stride == 0

    def record(self, t: float, rho: np.ndarray) -> None:
        self.times.append(t)
        self.values.append(transverse_signal(rho))
        self.segments.append(self.segment)


def _check_inputs(state: DeviationState, h_sys: HermitianOperator) -> None:
    if state.dim != h_sys.dim:
        raise NumericalError(f"state dimension {state.dim} does not match Hamiltonian dimension {h_sys.dim}")
    if not np.all(np.isfinite(h_sys.matrix)) or not np.all(np.isfinite(state.matrix)):
        raise NumericalError("non-finite entries in state or Hamiltonian")


def _evolve_cached(seq: PulseSequence, rho: np.ndarray, props: _Propagators, rec: _Recorder) -> tuple[np.ndarray, float]:
    t = 0.0
    for role, events, repeat in seq.blocks():
        runs = _split_at_samples(events)
        steps = [(props.product(run), math.fsum(e.duration for e in run), sampled) for run, sampled in runs]
        if not any(sampled for _, _, sampled in steps):
            whole = props.product(events)
            total = np.linalg.matrix_power(whole, repeat) if repeat > 1 else whole
            elapsed = repeat * math.fsum(e.duration for e in events)
            rho = rec.damp(total @ rho @ total.conj().T, elapsed)
            t += elapsed
        else:
            start = t
            block_time = math.fsum(e.duration for e in events)
            stride = rec.stride
            whole = props.product(events)
            # Unsampled cycles of each stride group collapse into one matrix power
            skip = np.linalg.matrix_power(whole, stride - 1) if stride > 1 else None
            cycle = 0
            while cycle < repeat:
                if stride > 1:
                    group = min(stride, repeat - cycle)
                    if group < stride:
                        rest = np.linalg.matrix_power(whole, group)
                        rho = rec.damp(rest @ rho @ rest.conj().T, group * block_time)
                        cycle += group
                        continue
                    rho = rec.damp(skip @ rho @ skip.conj().T, (stride - 1) * block_time)
                    cycle += stride - 1
                offset = 0.0
                for unitary, duration, sampled in steps:
                    rho = rec.damp(unitary @ rho @ unitary.conj().T, duration)
                    offset += duration
                    if sampled:
                        rec.record(start + cycle * block_time + offset, rho)
                cycle += 1
            t = start + repeat * block_time
        if role == "refocus":
            rec.segment += 1
    return rho, t


class _NoisyStepper:
    """Evolves windows under H_sys plus offsets frozen on the noise grid."""

    def __init__(self, props: _Propagators, path: np.ndarray, dt: float):
        self.props = props
        self.path = path
        self.dt = dt
        self.z = spin_z_values(props.n_spins)
        diagonal = np.diag(props.h_sys.matrix)
        self.diagonal_system = np.allclose(props.h_sys.matrix, np.diag(diagonal), rtol=0, atol=0)
        self.h_diag = diagonal.real
        # Running integral of each spin's noise at grid points
        self.integral = np.concatenate([np.zeros((path.shape[0], 1)), np.cumsum(path * dt, axis=1)], axis=1)

    def _noise_integral(self, t: float) -> np.ndarray:
        k = min(int(t // self.dt), self.path.shape[1] - 1)
        return self.integral[:, k] + (t - k * self.dt) * self.path[:, k]

    def _diagonal_noise(self, k: int) -> np.ndarray:
        # H_noise = -Sum_j delta_j I^z_j
        return -(self.path[:, k, None] * self.z).sum(axis=0)

    def advance(self, event: PulseEvent, t0: float, rho: np.ndarray) -> np.ndarray:
        t1 = t0 + event.duration
        if event.kind is EventKind.DELAY and self.diagonal_system:
            noise_phase = -(self._noise_integral(t1) - self._noise_integral(t0))[:, None] * self.z
            phases = self.h_diag * event.duration + noise_phase.sum(axis=0)
            factor = np.exp(-1j * phases)
            return factor[:, None] * rho * factor.conj()[None, :]

        base = self.props._hamiltonian(event)
        t = t0
        while t < t1 - 1e-15 * max(1.0, t1):
            k = min(int(t // self.dt + 1e-9), self.path.shape[1] - 1)
            step_end = min(t1, (k + 1) * self.dt)
            if step_end <= t:
                step_end = t1
            hamiltonian = base + np.diag(self._diagonal_noise(k))
            energies, vectors = linalg.eigh(hamiltonian)
            unitary = (vectors * np.exp(-1j * energies * (step_end - t))) @ vectors.conj().T
            rho = unitary @ rho @ unitary.conj().T
            t = step_end
        return rho


def _evolve_noisy(
    seq: PulseSequence,
    rho: np.ndarray,
    props: _Propagators,
    rec: _Recorder,
    noise: NoiseModel,
    dt_noise: float,
) -> tuple[np.ndarray, float]:
    path = sample_noise_path(noise, seq.total_duration, dt_noise, props.n_spins)
    stepper = _NoisyStepper(props, path, dt_noise)
    t = 0.0
    for role, events, repeat in seq.blocks():
        for cycle in range(repeat):
            for event in events:
                if event.kind is EventKind.SAMPLE:
                    if rec.wants(cycle):
                        rec.record(t, rho)
                elif event.kind is EventKind.PULSE and event.duration == 0:
                    unitary = props.window(event)
                    rho = unitary @ rho @ unitary.conj().T
                elif event.duration > 0:
                    rho = rec.damp(stepper.advance(event, t, rho), event.duration)
                    t += event.duration
        if role == "refocus":
            rec.segment += 1
    return rho, t


def evolve(
    state: DeviationState,
    seq: PulseSequence,
    h_sys: HermitianOperator,
    noise: NoiseModel | None = None,
    dt_noise: float | None = None,
    *,
    t1_s: float | None = None,
    sample_stride: int = 1,
    cache: bool = True,
) -> EchoTrain:
    """Propagate state through seq and record Tr(rho I^+) at every sample event.

    Args:
        noise: Offset noise; None or kind 'none' for coherent evolution.
        dt_noise: Noise grid step; required when noise is active and must
            resolve the fastest noise timescale (NoiseModel.max_dt).
        t1_s: Optional uniform exponential damping time; off when None.
        sample_stride: Record only every sample_stride-th cycle of each run;
            the cycles in between are applied as one matrix power.
        cache: Reuse window propagators across cycles. False rebuilds each
            one with a direct matrix exponential.

    Raises:
        NumericalError: Dimension mismatch or non-finite values.
        DomainError: Missing or too coarse dt_noise.
    """
    _check_inputs(state, h_sys)
    if t1_s is not None and not t1_s > 0:
        raise DomainError(f"t1_s must be > 0, got {t1_s}")

    if sample_stride < 1:
        raise DomainError(f"sample_stride must be >= 1, got {sample_stride}")

    props = _Propagators(h_sys, cache=cache)
    rec = _Recorder(t1_s, sample_stride)
    rho = np.array(state.matrix)
    noisy = noise is not None and noise.active

    if noisy:
        if dt_noise is None or not dt_noise > 0:
            raise DomainError("dt_noise must be > 0 when noise is active")
        if dt_noise > noise.max_dt * (1 + 1e-9):
            raise DomainError(f"dt_noise {dt_noise} s is coarser than the required {noise.max_dt} s")
        rho, t_end = _evolve_noisy(seq, rho, props, rec, noise, dt_noise)
    elif cache:
        rho, t_end = _evolve_cached(seq, rho, props, rec)
    else:
        rho, t_end = _evolve_stepwise(seq, rho, props, rec)

    if not np.all(np.isfinite(rho)):
        raise NumericalError("state became non-finite during evolution")

    logger.debug(
        "Evolved %d spins through %d pulses, %d samples, %.6g s",
        h_sys.n_spins, seq.n_pulses, len(rec.times), t_end,
    )
    provenance = {
        "sequence": seq.metadata,
        "n_spins": h_sys.n_spins,
        "n_pulses": seq.n_pulses,
        "duration_s": t_end,
        "noise": noise.to_dict() if noise is not None else None,
        "dt_noise_s": dt_noise if noisy else None,
        "t1_s": t1_s,
        "sample_stride": sample_stride,
    }
    return EchoTrain(
        times=np.array(rec.times),
        values=np.array(rec.values, dtype=complex),
        segment_index=np.array(rec.segments, dtype=int),
        provenance=provenance,
        final_state=DeviationState(_hermitize(rho)),
    )


def _evolve_stepwise(seq: PulseSequence, rho: np.ndarray, props: _Propagators, rec: _Recorder) -> tuple[np.ndarray, float]:
    """Event-by-event path with no reuse; the reference for the cached path."""
    t = 0.0
    for role, events, repeat in seq.blocks():
        for cycle in range(repeat):
            for event in events:
                if event.kind is EventKind.SAMPLE:
                    if rec.wants(cycle):
                        rec.record(t, rho)
                    continue
                unitary = props.window(event)
                rho = rec.damp(unitary @ rho @ unitary.conj().T, event.duration)
                t += event.duration
        if role == "refocus":
            rec.segment += 1
    return rho, t


def _hermitize(rho: np.ndarray) -> np.ndarray:
    """Hermitian traceless part of rho; drops round-off drift of long runs."""
    rho = 0.5 * (rho + rho.conj().T)
    return rho - (np.trace(rho).real / rho.shape[0]) * np.eye(rho.shape[0])


# =============================================================================
# Free induction
# =============================================================================

# Cap on dim^2 x n_times entries evaluated at once
_FID_CHUNK_ENTRIES = 2**24


def free_induction(state: DeviationState, h_sys: HermitianOperator, duration: float, sample_dt: float) -> EchoTrain:
    """Tr(rho(t) I^+) on the grid 0, sample_dt, ... <= duration with no RF.

    Evaluated in the eigenbasis of h_sys, so each sample costs O(dim^2).
    """
    _check_inputs(state, h_sys)
    if not sample_dt > 0:
        raise DomainError(f"sample_dt must be > 0, got {sample_dt}")
    if duration < 0:
        raise DomainError(f"duration must be >= 0, got {duration}")

    n_times = int(math.floor(duration / sample_dt + 1e-9)) + 1
    times = np.arange(n_times) * sample_dt
    energies, vectors = linalg.eigh(h_sys.matrix)
    rho_eig = vectors.conj().T @ state.matrix @ vectors

    rows, cols = _raised_pairs(h_sys.n_spins)
    raising = np.zeros((h_sys.dim, h_sys.dim), dtype=complex)
    raising[rows, cols] = 1.0
    raising_eig = vectors.conj().T @ raising @ vectors

    # M(t) = Sum_ab rho_ab A_ba exp(-i (E_a - E_b) t)
    weights = (rho_eig * raising_eig.T).reshape(-1)
    gaps = (energies[:, None] - energies[None, :]).reshape(-1)
    keep = np.abs(weights) > 0
    weights, gaps = weights[keep], gaps[keep]

    values = np.empty(n_times, dtype=complex)
    chunk = max(1, _FID_CHUNK_ENTRIES // max(1, len(weights)))
    for start in range(0, n_times, chunk):
        block = times[start:start + chunk]
        values[start:start + chunk] = np.exp(-1j * np.outer(block, gaps)) @ weights

    final = (vectors * np.exp(-1j * energies * times[-1])) @ vectors.conj().T
    rho_final = final @ state.matrix @ final.conj().T
    return EchoTrain(
        times=times,
        values=values,
        segment_index=np.zeros(n_times, dtype=int),
        provenance={"sequence": {"builder": "fid"}, "n_spins": h_sys.n_spins, "duration_s": float(times[-1])},
        final_state=DeviationState(_hermitize(rho_final)),
    )


# =============================================================================
# Disorder averaging
# =============================================================================

@dataclass(frozen=True, slots=True, kw_only=True)
class DisorderAverage:
    """Averaged train plus one record per realization.

    records[k] holds index, seed, success and either train or error.
    """

    mean: EchoTrain
    records: tuple[dict, ...]

    @property
    def n_failed(self) -> int:
        return sum(1 for r in self.records if not r["success"])

    @property
    def trains(self) -> list[EchoTrain]:
        return [r["train"] for r in self.records if r["success"]]

    def standard_error(self) -> np.ndarray:
        """Per-sample standard error of the mean complex signal."""
        values = np.array([t.values for t in self.trains])
        if len(values) < 2:
            return np.zeros(values.shape[1] if values.ndim == 2 else 0)
        return np.std(values, axis=0, ddof=1) / math.sqrt(len(values))


def _run_realization(realize: Callable[[int], EchoTrain], index: int, seed: int) -> dict:
    try:
        return {"index": index, "seed": seed, "success": True, "train": realize(seed), "error": None}
    except Exception as e:
        return {"index": index, "seed": seed, "success": False, "train": None, "error": f"{type(e).__name__}: {e}"}


def disorder_average(
    realize: Callable[[int], EchoTrain],
    n_realizations: int,
    base_seed: int = 0,
    *,
    workers: int = 1,
    seeds: Sequence[int] | None = None,
) -> DisorderAverage:
    """Run realize(seed) for seeds base_seed + k and average the trains.

    Realizations run on a thread pool when workers > 1; results are merged by
    realization index, so the average does not depend on completion order.
    Failed realizations are recorded and skipped.

    Raises:
        DomainError: If n_realizations < 1.
        NumericalError: If every realization failed.
    """
    if n_realizations < 1:
        raise DomainError(f"n_realizations must be >= 1, got {n_realizations}")
    if seeds is None:
        seeds = [base_seed + k for k in range(n_realizations)]
    elif len(seeds) != n_realizations:
        raise DomainError(f"got {len(seeds)} seeds for {n_realizations} realizations")

    results: dict[int, dict] = {}
    if workers <= 1:
        for index, seed in enumerate(seeds):
            results[index] = _run_realization(realize, index, seed)
    else:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            futures = {
                executor.submit(_run_realization, realize, index, seed): index
                for index, seed in enumerate(seeds)
            }
            for future in as_completed(futures):
                results[futures[future]] = future.result()

    records = tuple(results[index] for index in range(n_realizations))
    successes = [r["train"] for r in records if r["success"]]
    failed = n_realizations - len(successes)
    if not successes:
        raise NumericalError(f"all {n_realizations} realizations failed; first error: {records[0]['error']}")
    if failed:
        logger.warning("%d of %d realizations failed", failed, n_realizations)

    provenance = dict(successes[0].provenance)
    provenance.update({
        "n_realizations": n_realizations,
        "n_failed": failed,
        "seeds": [int(s) for s in seeds],
    })
    return DisorderAverage(mean=EchoTrain.mean(successes, provenance=provenance), records=records)
