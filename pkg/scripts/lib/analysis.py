"""Echo-train measurement chain: spectra, side-peak amplitudes, decay fits, scans.

Spectra use the offset sign convention of the simulator: a spin with offset
omega precesses as exp(-i omega t), and appears at +omega / 2pi Hz.
"""

from __future__ import annotations

import logging
import math
import warnings
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path

import numpy as np
from scipy import integrate, optimize, signal, stats

from lib import reports
from lib.errors import AnalysisError, CenterPeakOnlyError, DomainError, SpinSimError

logger = logging.getLogger(__name__)

DEFAULT_ZERO_PADDING = 4
DEFAULT_WINDOW_FRACTION = 0.5
DEFAULT_NOISE_FLOOR_FACTOR = 3.0
SPACING_TOLERANCE_S = 1e-9
# Relative gap below which two fitted time constants are treated as one
DEGENERATE_RATIO = 1e-3
RESOLUTION_TOLERANCE = 1e-9


class FitModel(StrEnum):
    SINGLE_EXP = "single_exp"
    DOUBLE_EXP = "double_exp"
    POWER_LAW = "power_law"


class AmplitudeMethod(StrEnum):
    SIDEPEAK = "sidepeak"
    MAGNITUDE = "magnitude"


@dataclass(frozen=True, slots=True, kw_only=True)
class FitResult:
    """Fitted parameters with 1-sigma uncertainties from the linearized covariance."""

    model: FitModel
    parameters: dict[str, float]
    uncertainties: dict[str, float]
    residual_norm: float
    n_points: int
    converged: bool
    note: str = ""

    def __getitem__(self, name: str) -> float:
        return self.parameters[name]

    def to_dict(self) -> dict:
        return {
            "model": self.model.value,
            "parameters": self.parameters,
            "uncertainties": self.uncertainties,
            "residual_norm": self.residual_norm,
            "n_points": self.n_points,
            "converged": self.converged,
            "note": self.note,
        }


@dataclass(frozen=True, slots=True)
class Spectrum:
    frequencies: np.ndarray
    amplitudes: np.ndarray

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.amplitudes)


# =============================================================================
# Spectra
# =============================================================================

def echo_spectrum(times: np.ndarray, values: np.ndarray, zero_padding: int = DEFAULT_ZERO_PADDING) -> Spectrum:
    """Zero-padded spectrum of one echo segment sampled once per cycle.

    Normalized by the number of samples, so a unit-amplitude tone gives a
    peak of height 1.

    Raises:
        AnalysisError: Fewer than 8 samples or non-uniform spacing.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=complex)
    if len(times) < 8:
        raise AnalysisError(f"echo spectrum needs at least 8 samples, got {len(times)}")
    if zero_padding < 1:
        raise AnalysisError(f"zero_padding must be >= 1, got {zero_padding}")
    steps = np.diff(times)
    spacing = float(np.mean(steps))
    if np.max(np.abs(steps - spacing)) > SPACING_TOLERANCE_S:
        raise AnalysisError("echo samples are not uniformly spaced")

    n_fft = zero_padding * len(values)
    # Sum_n x_n exp(+2 pi i f t_n): exp(-i omega t) lands at +omega / 2pi
    amplitudes = np.fft.fftshift(np.fft.ifft(values, n_fft)) * n_fft / len(values)
    frequencies = np.fft.fftshift(np.fft.fftfreq(n_fft, spacing))
    return Spectrum(frequencies, amplitudes)


def _peaks(magnitude: np.ndarray) -> np.ndarray:
    """Every local maximum of the magnitude spectrum, whatever its height."""
    peaks, _ = signal.find_peaks(magnitude)
    return peaks


def _half_max_crossing(freqs: np.ndarray, magnitude: np.ndarray, peak: int, half: float, step: int) -> tuple[float, int]:
    """Walk from peak until magnitude drops below half; return crossing frequency and last bin above."""
    i = peak
    while 0 <= i + step < len(magnitude) and magnitude[i + step] > half:
        i += step
    j = i + step
    if not 0 <= j < len(magnitude):
        return float(freqs[i]), i
    # Linear interpolation between bin i (above) and bin j (at or below)
    fraction = (magnitude[i] - half) / (magnitude[i] - magnitude[j])
    return float(freqs[i] + fraction * (freqs[j] - freqs[i])), i


def sidepeak_amplitude(
    spectrum: Spectrum,
    expected_offset_hz: float,
    window_fraction: float = DEFAULT_WINDOW_FRACTION,
) -> float:
    """Integral of |spectrum| between the half-maxima of the side-peak near expected_offset_hz.

    The peak is the strongest local maximum within +-window_fraction of the
    expected offset; equal peaks resolve toward the expected offset. Peaks
    outside the window, a dominant carrier included, do not affect the choice.

    Raises:
        CenterPeakOnlyError: No local maximum in the window but a peak at the carrier.
        AnalysisError: No local maximum in the window.
    """
    if expected_offset_hz == 0:
        raise AnalysisError("side-peak integration needs a nonzero expected offset")
    freqs, magnitude = spectrum.frequencies, spectrum.magnitude
    half_width = window_fraction * abs(expected_offset_hz)
    peaks = _peaks(magnitude)
    in_window = peaks[np.abs(freqs[peaks] - expected_offset_hz) <= half_width]

    if len(in_window) == 0:
        carrier = peaks[np.abs(freqs[peaks]) < half_width]
        if len(carrier):
            raise CenterPeakOnlyError(f"only a center peak near 0 Hz; no side-peak near {expected_offset_hz:g} Hz")
        raise AnalysisError(f"no spectral peak within {half_width:g} Hz of {expected_offset_hz:g} Hz")

    peak = max(in_window, key=lambda i: (magnitude[i], -abs(freqs[i] - expected_offset_hz)))
    half = magnitude[peak] / 2
    f_low, i_low = _half_max_crossing(freqs, magnitude, peak, half, -1)
    f_high, i_high = _half_max_crossing(freqs, magnitude, peak, half, +1)

    grid = np.concatenate([[f_low], freqs[i_low:i_high + 1], [f_high]])
    heights = np.concatenate([[min(half, magnitude[i_low])], magnitude[i_low:i_high + 1], [min(half, magnitude[i_high])]])
    return float(integrate.trapezoid(heights, grid))


def echo_amplitudes(
    train,
    method: AmplitudeMethod | str = AmplitudeMethod.SIDEPEAK,
    expected_offset_hz: float | None = None,
    zero_padding: int = DEFAULT_ZERO_PADDING,
    window_fraction: float = DEFAULT_WINDOW_FRACTION,
) -> tuple[np.ndarray, np.ndarray]:
    """(times, amplitudes) of an echo train.

    sidepeak: one amplitude per refocusing segment, at the segment's mean time.
    magnitude: |M| of every sample.
    """
    method = AmplitudeMethod(method)
    if method is AmplitudeMethod.MAGNITUDE:
        return train.times.copy(), train.magnitudes
    if expected_offset_hz is None:
        raise AnalysisError("sidepeak amplitudes need expected_offset_hz")

    times, amplitudes = [], []
    for segment_times, segment_values in train.segments():
        spectrum = echo_spectrum(segment_times, segment_values, zero_padding)
        amplitudes.append(sidepeak_amplitude(spectrum, expected_offset_hz, window_fraction))
        times.append(float(np.mean(segment_times)))
    return np.array(times), np.array(amplitudes)


def above_noise_floor(
    amplitudes: np.ndarray,
    factor: float = DEFAULT_NOISE_FLOOR_FACTOR,
    late_fraction: float = 0.25,
) -> np.ndarray:
    """Mask of amplitudes above factor x the median absolute deviation of the late-time tail."""
    amplitudes = np.asarray(amplitudes, dtype=float)
    tail = amplitudes[-max(2, int(len(amplitudes) * late_fraction)):]
    mad = float(np.median(np.abs(tail - np.median(tail))))
    return amplitudes > factor * mad


# =============================================================================
# Fits
# =============================================================================

def _single(t, a, t2):
    return a * np.exp(-t / t2)


def _double(t, a, ta, b, tb):
    return a * np.exp(-t / ta) + b * np.exp(-t / tb)


def _prepare(times, amplitudes, minimum: int) -> tuple[np.ndarray, np.ndarray]:
    times = np.asarray(times, dtype=float)
    amplitudes = np.asarray(amplitudes, dtype=float)
    if len(times) != len(amplitudes):
        raise AnalysisError("times and amplitudes differ in length")
    if len(times) < minimum:
        raise AnalysisError(f"need at least {minimum} points, got {len(times)}")
    return times, amplitudes


def _sigmas(covariance: np.ndarray) -> np.ndarray:
    diagonal = np.diag(covariance)
    return np.where(np.isfinite(diagonal) & (diagonal >= 0), np.sqrt(np.abs(diagonal)), np.inf)


def fit_single_exponential(times, amplitudes) -> FitResult:
    """Least-squares A exp(-t/T2), started from a log-linear regression.

    On non-convergence the log-linear values are returned with converged=False.
    """
    times, amplitudes = _prepare(times, amplitudes, 3)
    if np.any(amplitudes <= 0):
        raise AnalysisError("amplitudes must be positive for an exponential fit")

    guess = stats.linregress(times, np.log(amplitudes))
    t2_guess = -1.0 / guess.slope if guess.slope < 0 else 10 * (times[-1] - times[0] or 1.0)
    a_guess = math.exp(guess.intercept)

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", optimize.OptimizeWarning)
            params, covariance = optimize.curve_fit(
                _single, times, amplitudes, p0=[a_guess, t2_guess],
                bounds=([0.0, 0.0], [np.inf, np.inf]), maxfev=10000,
            )
        sigmas = _sigmas(covariance)
        converged = bool(np.all(np.isfinite(params)) and params[1] > 0)
    except (RuntimeError, ValueError) as e:
        logger.warning("Single-exponential fit did not converge: %s", e)
        params, sigmas, converged = np.array([a_guess, t2_guess]), np.array([np.inf, np.inf]), False

    residual = float(np.linalg.norm(amplitudes - _single(times, *params)))
    return FitResult(
        model=FitModel.SINGLE_EXP,
        parameters={"A": float(params[0]), "T2": float(params[1])},
        uncertainties={"A": float(sigmas[0]), "T2": float(sigmas[1])},
        residual_norm=residual,
        n_points=len(times),
        converged=converged,
        note="" if converged else "log-linear fallback",
    )


def fit_double_exponential(times, amplitudes) -> FitResult:
    """A exp(-t/Ta) + B exp(-t/Tb) with Ta < Tb, deterministic multi-start.

    Starts from every (T_fast, T_slow) pair on {span/10, span} x {0.3, 1, 3}
    and keeps the lowest residual. A degenerate optimum (one amplitude
    vanishing, Ta ~ Tb, or a residual no better than one exponential)
    collapses to the single-exponential result.
    """
    times, amplitudes = _prepare(times, amplitudes, 6)
    span = float(times[-1] - times[0]) or 1.0
    scale = float(np.max(np.abs(amplitudes))) or 1.0

    best = None
    for fast in (span / 10 * m for m in (0.3, 1, 3)):
        for slow in (span * m for m in (0.3, 1, 3)):
            if fast >= slow:
                continue
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", optimize.OptimizeWarning)
                    params, covariance = optimize.curve_fit(
                        _double, times, amplitudes, p0=[scale / 2, fast, scale / 2, slow],
                        bounds=([0.0, 0.0, 0.0, 0.0], [np.inf, np.inf, np.inf, np.inf]),
                        maxfev=20000,
                    )
            except (RuntimeError, ValueError):
                continue
            residual = float(np.linalg.norm(amplitudes - _double(times, *params)))
            if best is None or residual < best[0]:
                best = (residual, params, covariance)

    single = fit_single_exponential(times, amplitudes) if np.all(amplitudes > 0) else None
    if best is None:
        logger.warning("Double-exponential fit did not converge from any start")
        if single is None:
            raise AnalysisError("double-exponential fit failed and amplitudes are not all positive")
        return _collapsed(single, converged=False, note="no start converged; single-exponential fallback")

    residual, params, covariance = best
    sigmas = _sigmas(covariance)
    a, ta, b, tb = params
    sa, sta, sb, stb = sigmas
    if ta > tb:
        a, ta, b, tb = b, tb, a, ta
        sa, sta, sb, stb = sb, stb, sa, sta

    degenerate = abs(tb - ta) <= DEGENERATE_RATIO * tb or min(a, b) <= 1e-9 * (a + b)
    # Two components that fit no better than one are not resolved
    if single is not None and single.residual_norm <= residual + RESOLUTION_TOLERANCE * scale * math.sqrt(len(times)):
        degenerate = True
    if degenerate and single is not None:
        return _collapsed(single, converged=single.converged, note="degenerate time constants; collapsed to single exponential")

    return FitResult(
        model=FitModel.DOUBLE_EXP,
        parameters={"A": float(a), "T_a": float(ta), "B": float(b), "T_b": float(tb)},
        uncertainties={"A": float(sa), "T_a": float(sta), "B": float(sb), "T_b": float(stb)},
        residual_norm=residual,
        n_points=len(times),
        converged=True,
    )


def _collapsed(single: FitResult, converged: bool, note: str) -> FitResult:
    t2, sigma = single["T2"], single.uncertainties["T2"]
    return FitResult(
        model=FitModel.DOUBLE_EXP,
        parameters={"A": single["A"], "T_a": t2, "B": 0.0, "T_b": t2},
        uncertainties={"A": single.uncertainties["A"], "T_a": sigma, "B": 0.0, "T_b": sigma},
        residual_norm=single.residual_norm,
        n_points=single.n_points,
        converged=converged,
        note=note,
    )


def fit_power_law(x, y) -> FitResult:
    """Unweighted linear regression of log y on log x: y = prefactor * x^exponent."""
    x, y = _prepare(x, y, 3)
    if np.any(x <= 0) or np.any(y <= 0):
        raise AnalysisError("power-law fit needs positive values")
    fit = stats.linregress(np.log(x), np.log(y))
    predicted = fit.intercept + fit.slope * np.log(x)
    return FitResult(
        model=FitModel.POWER_LAW,
        parameters={"exponent": float(fit.slope), "log_prefactor": float(fit.intercept)},
        uncertainties={"exponent": float(fit.stderr), "log_prefactor": float(fit.intercept_stderr)},
        residual_norm=float(np.linalg.norm(np.log(y) - predicted)),
        n_points=len(x),
        converged=True,
    )


def figures_of_merit(
    f0_hz: float,
    t2_s: float,
    rabi_hz: float | None = None,
    coupling_hz: float | None = None,
    pulse_width_s: float | None = None,
) -> dict:
    """Quality factor Q = f0 pi T2, plus Omega T2 and J T2 when given.

    A pi/2 pulse width stands in for the Rabi frequency as Omega = 1 / (4 width).
    """
    for name, value in (("f0_hz", f0_hz), ("t2_s", t2_s), ("rabi_hz", rabi_hz),
                        ("coupling_hz", coupling_hz), ("pulse_width_s", pulse_width_s)):
        if value is not None and not value > 0:
            raise DomainError(f"{name} must be > 0, got {value}")
    if rabi_hz is None and pulse_width_s is not None:
        rabi_hz = 1 / (4 * pulse_width_s)
    return {
        "Q": f0_hz * math.pi * t2_s,
        "omega_t2": None if rabi_hz is None else rabi_hz * t2_s,
        "j_t2": None if coupling_hz is None else coupling_hz * t2_s,
    }


# =============================================================================
# Scans
# =============================================================================

class ScanAxis(StrEnum):
    CYCLE_TIME = "cycle_time"
    ABUNDANCE = "abundance"


@dataclass(frozen=True, slots=True, kw_only=True)
class ScanTable:
    axis: ScanAxis
    rows: list[dict]
    summary: dict = field(default_factory=dict)

    @property
    def successful(self) -> list[dict]:
        return [row for row in self.rows if row["success"]]


def _scan_summary(axis: ScanAxis, rows: list[dict]) -> dict:
    good = [r for r in rows if r["success"] and r.get("t2_s") and r["t2_s"] > 0]
    summary: dict = {"n_points": len(rows), "n_failed": len(rows) - len([r for r in rows if r["success"]])}
    if len(good) < 3:
        summary["note"] = "fewer than 3 successful points; no trend fitted"
        return summary

    if axis is ScanAxis.CYCLE_TIME:
        fit = fit_power_law([r["cycle_time_s"] for r in good], [r["t2_s"] for r in good])
        summary |= {
            "exponent": fit["exponent"],
            "exponent_stderr": fit.uncertainties["exponent"],
            "weighting": "unweighted log-log regression",
        }
    else:
        x = np.array([r["abundance"] for r in good])
        rate = 1.0 / np.array([r["t2_s"] for r in good])
        fit = stats.linregress(x, rate)
        summary |= {
            "rate_slope_s": float(fit.slope),
            "rate_slope_stderr_s": float(fit.stderr),
            "rate_intercept_s": float(fit.intercept),
            "rate_intercept_stderr_s": float(fit.intercept_stderr),
            "intercept_consistent_with_zero": bool(abs(fit.intercept) <= 2 * fit.intercept_stderr),
            "weighting": "unweighted linear regression of 1/T2 on p",
        }
    return summary


def run_scan(
    axis: ScanAxis | str,
    grid: Sequence[float],
    config,
    *,
    runner: Callable[..., dict] | None = None,
    out_dir: Path | None = None,
    workers: int = 1,
) -> ScanTable:
    """Evaluate every grid point and fit the scan trend.

    runner(config, axis, value, point_dir, workers) returns the point's row:
    at least success, and on success t2_s plus cycle_time_s or abundance.
    Rows of points whose point.json already exists in out_dir, stamped with
    the same config hash, are reloaded instead of recomputed. Per-point
    failures are recorded and the scan continues. Rows are sorted by grid
    value.

    Raises:
        DomainError: Grid has fewer than 3 points.
    """
    axis = ScanAxis(axis)
    if len(grid) < 3:
        raise DomainError(f"a scan grid needs at least 3 points, got {len(grid)}")
    if runner is None:
        from lib.experiment import run_point as runner
    digest = config.config_hash() if hasattr(config, "config_hash") else None

    rows = []
    for index, value in enumerate(sorted(grid)):
        point_dir = None if out_dir is None else Path(out_dir) / f"point_{index:03d}"
        marker = None if point_dir is None else point_dir / "point.json"
        if marker is not None and marker.exists():
            stored = reports.read_json(marker)
            if stored.pop("config_hash", None) == digest:
                logger.info("Reusing completed scan point %s = %g", axis, value)
                stored.pop("version", None)
                rows.append(stored)
                continue
            logger.warning("Ignoring %s: written for a different config", marker)

        logger.info("Scan point %d/%d: %s = %g", index + 1, len(grid), axis, value)
        try:
            row = runner(config, axis, value, point_dir, workers)
        except SpinSimError as e:
            logger.warning("Scan point %s = %g failed: %s", axis, value, e)
            row = {"success": False, "error": f"{type(e).__name__}: {e}"}
        row = {"index": index, "value": value, **row}
        if marker is not None and row["success"]:
            reports.write_json(marker, row, digest)
        rows.append(row)

    return ScanTable(axis=axis, rows=rows, summary=_scan_summary(axis, rows))
