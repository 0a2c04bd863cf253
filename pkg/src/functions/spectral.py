"""
Complex optical depth of the prepared vapour and comb fitting.

Sign convention: fields evolve as exp(+i 2 pi f t) (numpy's FFT convention), so a
causal resonance at f0 has the complex line shape 1 / (pi (g + i (f - f0))) with
g the half width. Re D is absorption, Im D the matching dispersion; the probe
transfer function is exp(-D / 2).
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import curve_fit, least_squares
from scipy.signal import fftconvolve, find_peaks, hilbert
from scipy.special import wofz

from functions.atomic_model import LineTable
from functions.errors import DomainError, FitError, NoCombError
from functions.pump_sim import GaussianClass, VelocityDistribution
from utils.tables import read_table, write_table

logger = logging.getLogger(__name__)

FWHM_TO_SIGMA = 1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))
FOUR_LN2 = 4.0 * np.log(2.0)
# Relative F=4 density above which a velocity bin counts as populated
POPULATED_THRESHOLD = 1e-6
EDGE_LEAKAGE = 1e-3
# fit_comb reports no comb when the tooth depth is below either floor
NO_COMB_RMS_FACTOR = 3.0
NO_COMB_PEAK_FRACTION = 1e-3


@dataclass(frozen=True)
class FrequencyGrid:
    """Uniform probe-frequency grid (Hz, relative to the reference line)."""
    start: float
    step: float
    count: int

    def __post_init__(self):
        if self.step <= 0:
            raise DomainError(f"frequency step must be positive, got {self.step}")
        if self.count < 2:
            raise DomainError(f"frequency grid needs at least 2 points, got {self.count}")

    @classmethod
    def symmetric(cls, centre: float, half_span: float, count: int) -> "FrequencyGrid":
        if count < 2:
            raise DomainError(f"frequency grid needs at least 2 points, got {count}")
        return cls(centre - half_span, 2.0 * half_span / (count - 1), count)

    @property
    def stop(self) -> float:
        return self.start + self.step * (self.count - 1)

    @property
    def freqs(self) -> np.ndarray:
        return self.start + self.step * np.arange(self.count)


# Default probe grid: +/-1.5 GHz around F=4 -> F'=5, 2^15 points
DEFAULT_GRID = FrequencyGrid.symmetric(0.0, 1.5e9, 2 ** 15)


@dataclass(frozen=True)
class ComplexSpectrum:
    """Complex optical depth D on a frequency grid."""
    grid: FrequencyGrid
    depth: np.ndarray

    def __post_init__(self):
        depth = np.array(self.depth, dtype=complex, copy=True)
        if depth.shape != (self.grid.count,):
            raise DomainError(f"depth has shape {depth.shape}, grid has {self.grid.count} points")
        if np.any(depth.real < 0):
            raise DomainError("Re D must be non-negative")
        depth.setflags(write=False)
        object.__setattr__(self, "depth", depth)

    @property
    def freqs(self) -> np.ndarray:
        return self.grid.freqs

    @property
    def transmission(self) -> np.ndarray:
        """Intensity transmission exp(-Re D)."""
        return np.exp(-self.depth.real)

    def scaled(self, factor: float) -> "ComplexSpectrum":
        return ComplexSpectrum(self.grid, self.depth * factor)

    def __add__(self, other: "ComplexSpectrum") -> "ComplexSpectrum":
        if other.grid != self.grid:
            raise DomainError("cannot add spectra on different grids")
        return ComplexSpectrum(self.grid, self.depth + other.depth)


@dataclass(frozen=True)
class CombParams:
    """Fitted (or guessed) comb: spacing, tooth FWHM, depths, tooth count, bandwidth, finesse."""
    delta: float
    gamma: float
    d: float
    d0: float
    m_teeth: int
    bandwidth: float
    finesse: float
    first_tooth: float = 0.0
    residual: float = 0.0
    tooth_depths: Tuple[float, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if self.delta <= 0 or self.gamma <= 0:
            raise DomainError("comb spacing and tooth width must be positive")
        if self.d < 0 or self.d0 < 0:
            raise DomainError(f"comb depths must be non-negative (d={self.d}, d0={self.d0})")
        if self.m_teeth < 2:
            raise DomainError(f"a comb needs at least 2 teeth, got {self.m_teeth}")
        if not np.isclose(self.finesse, self.delta / self.gamma, rtol=1e-9, atol=0.0):
            raise DomainError("finesse must equal delta / gamma")

    @classmethod
    def build(
        cls,
        delta: float,
        gamma: float,
        d: float,
        d0: float,
        m_teeth: int,
        first_tooth: float = 0.0,
        bandwidth: Optional[float] = None,
        residual: float = 0.0,
        tooth_depths: Sequence[float] = (),
    ) -> "CombParams":
        return cls(
            delta=delta,
            gamma=gamma,
            d=d,
            d0=d0,
            m_teeth=m_teeth,
            bandwidth=m_teeth * delta if bandwidth is None else bandwidth,
            finesse=delta / gamma,
            first_tooth=first_tooth,
            residual=residual,
            tooth_depths=tuple(tooth_depths),
        )

    def centres(self) -> np.ndarray:
        return self.first_tooth + self.delta * np.arange(self.m_teeth)

    def as_dict(self) -> Dict[str, float]:
        return {
            "delta_hz": self.delta,
            "gamma_hz": self.gamma,
            "d": self.d,
            "d0": self.d0,
            "m_teeth": self.m_teeth,
            "bandwidth_hz": self.bandwidth,
            "finesse": self.finesse,
            "first_tooth_hz": self.first_tooth,
            "residual_rms": self.residual,
        }


@dataclass(frozen=True)
class PeakFit:
    """Single Gaussian feature on a flat background."""
    centre: float
    width: float
    amplitude: float
    background: float
    residual: float

    def as_dict(self) -> Dict[str, float]:
        return {
            "peak_centre_hz": self.centre,
            "peak_fwhm_hz": self.width,
            "peak_amplitude": self.amplitude,
            "peak_background": self.background,
            "residual_rms": self.residual,
        }


def complex_lorentzian(x: np.ndarray, fwhm: float) -> np.ndarray:
    """Unit-area causal complex Lorentzian 1 / (pi (g + i x)), g = fwhm / 2."""
    return 1.0 / (np.pi * (0.5 * fwhm + 1j * np.asarray(x, dtype=float)))


def voigt_kernel(x: np.ndarray, sigma: float, fwhm: float) -> np.ndarray:
    """Complex Lorentzian (FWHM ``fwhm``) convolved with a unit-area Gaussian of rms ``sigma``."""
    z = (-np.asarray(x, dtype=float) + 0.5j * fwhm) / (sigma * np.sqrt(2.0))
    return wofz(z) / (sigma * np.sqrt(2.0 * np.pi))


def _check_coverage(dist: VelocityDistribution, lines: LineTable, grid: FrequencyGrid) -> None:
    peak = float(np.max(dist.pop_f4))
    if peak <= 0:
        return
    populated = dist.grid[dist.pop_f4 > POPULATED_THRESHOLD * peak]
    v_lo, v_hi = float(populated[0]), float(populated[-1])
    for line in lines.lines:
        f_lo = line.offset + v_lo / line.wavelength
        f_hi = line.offset + v_hi / line.wavelength
        if f_lo < grid.start or f_hi > grid.stop:
            raise DomainError(
                f"grid [{grid.start / 1e6:.1f}, {grid.stop / 1e6:.1f}] MHz does not cover the populated "
                f"classes of {line.name} ([{f_lo / 1e6:.1f}, {f_hi / 1e6:.1f}] MHz)"
            )


def _warn_edge_leakage(depth: np.ndarray) -> None:
    peak = float(np.max(depth.real)) if depth.size else 0.0
    if peak > 0 and max(depth.real[0], depth.real[-1]) > EDGE_LEAKAGE * peak:
        logger.warning(
            "Re D at the grid edge is %.2e of the peak; widen the frequency grid",
            max(depth.real[0], depth.real[-1]) / peak,
        )


def _line_depth_fft(dist: VelocityDistribution, line, grid: FrequencyGrid) -> np.ndarray:
    freqs = grid.freqs
    # F=4 density per Hz of line frequency
    v = (freqs - line.offset) * line.wavelength
    rho = np.interp(v, dist.grid, dist.pop_f4, left=0.0, right=0.0) * line.wavelength
    lags = grid.step * np.arange(-(grid.count - 1), grid.count)
    kernel = complex_lorentzian(lags, line.natural_linewidth) * grid.step
    full = fftconvolve(rho.astype(complex), kernel)
    return full[grid.count - 1: 2 * grid.count - 1]


def _line_depth_quadrature(dist: VelocityDistribution, line, grid: FrequencyGrid, chunk: int) -> np.ndarray:
    keep = dist.pop_f4 > 0
    velocities = dist.grid[keep]
    weights = dist.pop_f4[keep] * dist.dv
    line_freqs = line.offset + velocities / line.wavelength
    freqs = grid.freqs
    out = np.zeros(grid.count, dtype=complex)
    rows = max(1, chunk // max(1, velocities.size))
    for i in range(0, grid.count, rows):
        x = freqs[i:i + rows, None] - line_freqs[None, :]
        out[i:i + rows] = complex_lorentzian(x, line.natural_linewidth) @ weights
    return out


def complex_depth_spectrum(
    dist: VelocityDistribution,
    lines: LineTable,
    grid: FrequencyGrid = DEFAULT_GRID,
    od_scale: float = 1.0,
    method: str = "fft",
    chunk: int = 2 ** 22,
) -> ComplexSpectrum:
    """
    D(f) = od_scale * sum_lines S * integral pop_f4(v) L(f - offset - v/lambda) dv.

    Args:
        dist: Ground-state distribution (only F=4 is probed)
        lines: Probe line table
        grid: Frequency grid
        od_scale: Optical depth per unit F=4 density (per m/s)
        method: "fft" (density resampled onto the grid and convolved with the
            sampled kernel) or "quadrature" (direct sum over velocity bins)
        chunk: Matrix size limit for the quadrature path

    Returns:
        ComplexSpectrum on ``grid``
    """
    if od_scale <= 0:
        raise DomainError(f"od_scale must be positive, got {od_scale}")
    if method not in ("fft", "quadrature"):
        raise DomainError(f"unknown spectrum method {method!r}")
    _check_coverage(dist, lines, grid)

    depth = np.zeros(grid.count, dtype=complex)
    if np.any(dist.pop_f4 > 0):
        for line in lines.lines:
            if line.strength == 0:
                continue
            if method == "fft":
                depth += line.strength * _line_depth_fft(dist, line, grid)
            else:
                depth += line.strength * _line_depth_quadrature(dist, line, grid, chunk)
    depth *= od_scale
    depth = np.maximum(depth.real, 0.0) + 1j * depth.imag
    _warn_edge_leakage(depth)
    return ComplexSpectrum(grid, depth)


def voigt_depth_spectrum(
    classes: Sequence[GaussianClass],
    lines: LineTable,
    grid: FrequencyGrid = DEFAULT_GRID,
    od_scale: float = 1.0,
) -> ComplexSpectrum:
    """Closed-form D(f) for Gaussian velocity classes via the Faddeeva function."""
    if od_scale <= 0:
        raise DomainError(f"od_scale must be positive, got {od_scale}")
    freqs = grid.freqs
    depth = np.zeros(grid.count, dtype=complex)
    for line in lines.lines:
        for cls in classes:
            x = freqs - line.offset - cls.velocity / line.wavelength
            depth += line.strength * cls.area * voigt_kernel(x, cls.sigma / line.wavelength, line.natural_linewidth)
    depth *= od_scale
    return ComplexSpectrum(grid, np.maximum(depth.real, 0.0) + 1j * depth.imag)


def comb_teeth(freqs: np.ndarray, first_tooth: float, delta: float, gamma: float, m_teeth: int) -> np.ndarray:
    """Sum of M unit-height Gaussian teeth of FWHM ``gamma``."""
    centres = first_tooth + delta * np.arange(m_teeth)
    x = np.asarray(freqs, dtype=float)[:, None] - centres[None, :]
    return np.exp(-FOUR_LN2 * (x / gamma) ** 2).sum(axis=1)


def comb_model(freqs: np.ndarray, params: CombParams) -> np.ndarray:
    """Re D of a flat background plus M equal Gaussian teeth."""
    return params.d0 + params.d * comb_teeth(freqs, params.first_tooth, params.delta, params.gamma, params.m_teeth)


def gaussian_comb_spectrum(grid: FrequencyGrid, params: CombParams) -> ComplexSpectrum:
    """
    Causal comb spectrum: Gaussian teeth with their Dawson-function dispersion.

    The flat background d0 is added to Re D only.
    """
    sigma = params.gamma * FWHM_TO_SIGMA
    freqs = grid.freqs
    depth = np.full(grid.count, params.d0, dtype=complex)
    for centre in params.centres():
        depth += params.d * wofz(-(freqs - centre) / (sigma * np.sqrt(2.0)))
    return ComplexSpectrum(grid, np.maximum(depth.real, 0.0) + 1j * depth.imag)


def kramers_kronig_residual(spectrum: ComplexSpectrum, pad_factor: int = 16) -> float:
    """Relative L2 mismatch between Im D and the discrete Hilbert partner of Re D."""
    re = spectrum.depth.real
    n = re.size
    padded = np.zeros(n * pad_factor)
    padded[:n] = re
    im_kk = -np.imag(hilbert(padded))[:n]
    norm = np.linalg.norm(spectrum.depth.imag)
    if norm == 0:
        return float(np.linalg.norm(im_kk))
    return float(np.linalg.norm(spectrum.depth.imag - im_kk) / norm)


def _window_data(spectrum: ComplexSpectrum, window: Tuple[float, float]) -> Tuple[np.ndarray, np.ndarray]:
    lo, hi = sorted(window)
    freqs = spectrum.freqs
    mask = (freqs >= lo) & (freqs <= hi)
    if np.count_nonzero(mask) < 8:
        raise DomainError(f"fit window [{lo / 1e6:.1f}, {hi / 1e6:.1f}] MHz holds too few samples")
    return freqs[mask], spectrum.depth.real[mask]


def tooth_depths(
    spectrum: ComplexSpectrum,
    first_tooth: float,
    delta: float,
    gamma: float,
    m_teeth: int,
    window: Tuple[float, float],
) -> Tuple[np.ndarray, np.ndarray, float, float]:
    """
    Per-tooth depths by linear least squares with positions and width held fixed.

    One extra tooth slot is probed beyond each end of the comb, over the window
    widened by one spacing on each side.

    Returns:
        (slot centres, slot depths, background, residual rms)
    """
    lo, hi = sorted(window)
    grid = spectrum.grid
    centres = first_tooth + delta * np.arange(-1, m_teeth + 1)
    centres = centres[(centres >= grid.start) & (centres <= grid.stop)]
    freqs, y = _window_data(spectrum, (max(lo - delta, grid.start), min(hi + delta, grid.stop)))
    basis = np.exp(-FOUR_LN2 * ((freqs[:, None] - centres[None, :]) / gamma) ** 2)
    design = np.hstack([np.ones((freqs.size, 1)), basis])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    rms = float(np.sqrt(np.mean((y - design @ coef) ** 2)))
    return centres, coef[1:], float(coef[0]), rms


def comb_bandwidth(depths: np.ndarray, delta: float) -> float:
    """Span of the teeth whose depth is at least half the median depth."""
    if depths.size == 0:
        return 0.0
    threshold = 0.5 * float(np.median(depths))
    qualifying = np.flatnonzero(depths >= threshold) if threshold > 0 else np.array([], dtype=int)
    if qualifying.size == 0:
        return 0.0
    return float((qualifying[-1] - qualifying[0] + 1) * delta)


def fit_comb(
    spectrum: ComplexSpectrum,
    window: Tuple[float, float],
    guess: CombParams,
    fix_delta: bool = False,
    max_nfev: int = 2000,
) -> CombParams:
    """
    Fit d0 + M equal Gaussian teeth to Re D inside ``window``.

    Args:
        spectrum: Spectrum to fit
        window: (low, high) frequency range in Hz
        guess: Starting comb; its ``m_teeth`` fixes the tooth count
        fix_delta: Hold the spacing at ``guess.delta`` (a known modulation frequency)
        max_nfev: Function evaluation budget

    Returns:
        Fitted CombParams; ``residual`` is the rms of the equal-depth fit and
        ``tooth_depths`` the per-slot depths behind the bandwidth

    Raises:
        NoCombError: fitted tooth depth is below three times the fit residual
            rms (or 1e-3 of the peak depth)
        FitError: the optimizer ran out of evaluations
    """
    lo, hi = sorted(window)
    if hi - lo < guess.delta:
        raise DomainError("fit window must span at least two teeth")
    freqs, y = _window_data(spectrum, (lo, hi))
    x = freqs / 1e6
    m = guess.m_teeth
    delta0 = guess.delta / 1e6

    def unpack(p):
        if fix_delta:
            d0, d, f0, gamma = p
            return d0, d, f0, delta0, gamma
        return p

    def residuals(p):
        d0, d, f0, delta, gamma = unpack(p)
        return d0 + d * comb_teeth(x, f0, delta, gamma, m) - y

    p0 = [guess.d0, guess.d, guess.first_tooth / 1e6, delta0, guess.gamma / 1e6]
    lower = [0.0, 0.0, p0[2] - 0.5 * delta0, 0.5 * delta0, 1e-3 * delta0]
    upper = [np.inf, np.inf, p0[2] + 0.5 * delta0, 1.5 * delta0, 2.0 * delta0]
    if fix_delta:
        del p0[3], lower[3], upper[3]
    p0 = np.clip(p0, lower, upper)

    result = least_squares(
        residuals, p0, bounds=(lower, upper), x_scale="jac",
        ftol=1e-12, xtol=1e-12, gtol=1e-12, max_nfev=max_nfev,
    )
    d0, d, f0, delta, gamma = (float(v) for v in unpack(result.x))
    rms = float(np.sqrt(np.mean(result.fun ** 2)))
    best = CombParams.build(delta * 1e6, gamma * 1e6, d, d0, m, first_tooth=f0 * 1e6, residual=rms)
    if result.status == 0:
        raise FitError(f"comb fit did not converge after {result.nfev} evaluations", best=best, residual=rms)

    threshold = max(NO_COMB_RMS_FACTOR * rms, NO_COMB_PEAK_FRACTION * float(np.max(np.abs(y))))
    if d < threshold:
        raise NoCombError(
            f"no comb in window: tooth depth {d:.3e} below {threshold:.3e} (fit rms {rms:.3e})",
            d0=float(np.mean(y)), best=best, residual=rms,
        )

    _, depths, _, _ = tooth_depths(spectrum, best.first_tooth, best.delta, best.gamma, m, (lo, hi))
    fitted = CombParams.build(
        best.delta, best.gamma, d, d0, m,
        first_tooth=best.first_tooth,
        bandwidth=comb_bandwidth(depths, best.delta),
        residual=rms,
        tooth_depths=depths,
    )
    logger.info(
        "comb fit: delta=%.2f MHz gamma=%.2f MHz d=%.3f d0=%.3f F=%.2f bandwidth=%.1f MHz rms=%.3f",
        fitted.delta / 1e6, fitted.gamma / 1e6, fitted.d, fitted.d0, fitted.finesse,
        fitted.bandwidth / 1e6, rms,
    )
    return fitted


def _gaussian_peak(x, amplitude, centre, width, background):
    return background + amplitude * np.exp(-FOUR_LN2 * ((x - centre) / width) ** 2)


def fit_peak(
    spectrum: ComplexSpectrum,
    window: Tuple[float, float],
    guess_width: float = 40e6,
) -> PeakFit:
    """Fit one Gaussian feature plus flat background to Re D inside ``window``."""
    freqs, y = _window_data(spectrum, window)
    x = freqs / 1e6
    i_max = int(np.argmax(y))
    p0 = [float(y[i_max] - y.min()), float(x[i_max]), guess_width / 1e6, float(y.min())]
    bounds = ([0.0, x[0], 1e-3, -np.inf], [np.inf, x[-1], x[-1] - x[0], np.inf])
    try:
        popt, _ = curve_fit(_gaussian_peak, x, y, p0=p0, bounds=bounds, maxfev=5000)
    except RuntimeError as e:
        raise FitError(f"peak fit did not converge: {e}") from e
    rms = float(np.sqrt(np.mean((_gaussian_peak(x, *popt) - y) ** 2)))
    amplitude, centre, width, background = (float(v) for v in popt)
    return PeakFit(centre * 1e6, width * 1e6, amplitude, background, rms)


def find_peaks_hz(spectrum: ComplexSpectrum, prominence: float = 0.02) -> np.ndarray:
    """Frequencies of local maxima of Re D with the given prominence (fraction of the peak)."""
    re = spectrum.depth.real
    if re.max() <= 0:
        return np.array([])
    idx, _ = find_peaks(re, prominence=prominence * re.max())
    return spectrum.freqs[idx]


def spectrum_frame(spectrum: ComplexSpectrum) -> pd.DataFrame:
    return pd.DataFrame({
        "freq_hz": spectrum.freqs,
        "re_d": spectrum.depth.real,
        "im_d": spectrum.depth.imag,
        "transmission": spectrum.transmission,
    })


def save_spectrum(path: str, spectrum: ComplexSpectrum, metadata: Optional[Dict[str, object]] = None) -> str:
    """Write ``freq_hz re_d im_d transmission`` with header metadata."""
    header = {"grid_start_hz": spectrum.grid.start, "grid_step_hz": spectrum.grid.step,
              "grid_count": spectrum.grid.count}
    header.update(metadata or {})
    return write_table(path, spectrum_frame(spectrum), header)


def load_spectrum(path: str) -> ComplexSpectrum:
    """Read a spectrum table; ``im_d`` is optional (zero if absent)."""
    try:
        df, _ = read_table(path)
    except (OSError, ValueError) as e:
        raise DomainError(f"cannot read spectrum file {path}: {e}") from e
    if "freq_hz" not in df or "re_d" not in df:
        raise DomainError(f"{path}: spectrum table needs freq_hz and re_d columns")
    freqs = df["freq_hz"].to_numpy(dtype=float)
    if freqs.size < 2:
        raise DomainError(f"{path}: spectrum table needs at least 2 rows")
    step = (freqs[-1] - freqs[0]) / (freqs.size - 1)
    if not np.allclose(np.diff(freqs), step, rtol=1e-6, atol=0.0):
        raise DomainError(f"{path}: frequency column is not uniformly spaced")
    im = df["im_d"].to_numpy(dtype=float) if "im_d" in df else np.zeros(freqs.size)
    re = np.clip(df["re_d"].to_numpy(dtype=float), 0.0, None)
    return ComplexSpectrum(FrequencyGrid(float(freqs[0]), float(step), int(freqs.size)), re + 1j * im)
