"""
Linear propagation of probe envelopes through a prepared medium.

The envelope is taken to the frequency domain with numpy's FFT, multiplied by
H(f) = exp(-D(f) / 2) and brought back. ``dipole_sum_echo`` is an independent
time-domain oracle built from discrete emitters.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.fft import fft, fftfreq, ifft, next_fast_len

from functions.atomic_model import CS133_T1_S
from functions.errors import DomainError, ResizeError
from functions.spectral import ComplexSpectrum

logger = logging.getLogger(__name__)

DEFAULT_DT_S = 10e-12
DEFAULT_SPAN_S = 80e-9
# Lead-in before the first pulse centre
MIN_LEAD_S = 10e-9
# Fraction of the transform window treated as "edge" by the wrap-around check
EDGE_FRACTION = 0.02
WRAP_TOLERANCE = 1e-3
# Pulse energy that must fall on the spectrum grid
BAND_ENERGY = 0.99
# Field overlap of neighbouring modes above which make_pulse_train warns
MAX_MODE_OVERLAP = 0.5


@dataclass(frozen=True)
class PulseEnvelope:
    """Complex field envelope sampled at t0 + k * dt."""
    t0: float
    dt: float
    samples: np.ndarray
    carrier_detuning: float = 0.0

    def __post_init__(self):
        if self.dt <= 0:
            raise DomainError(f"dt must be positive, got {self.dt}")
        samples = np.array(self.samples, dtype=complex, copy=True)
        if samples.ndim != 1 or samples.size < 2:
            raise DomainError("pulse needs a 1-D array of at least 2 samples")
        if not np.all(np.isfinite(samples)):
            raise DomainError("pulse samples must be finite")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.samples.size)

    @property
    def intensity(self) -> np.ndarray:
        return np.abs(self.samples) ** 2

    @property
    def energy(self) -> float:
        return float(np.sum(self.intensity) * self.dt)

    @property
    def t_end(self) -> float:
        return self.t0 + self.dt * (self.samples.size - 1)

    def with_samples(self, samples: np.ndarray) -> "PulseEnvelope":
        return PulseEnvelope(self.t0, self.dt, samples, self.carrier_detuning)

    def __add__(self, other: "PulseEnvelope") -> "PulseEnvelope":
        if (other.t0, other.dt, other.samples.size) != (self.t0, self.dt, self.samples.size):
            raise DomainError("cannot add pulses sampled on different time grids")
        return self.with_samples(self.samples + other.samples)


@dataclass(frozen=True)
class EchoReport:
    """Energy bookkeeping of one retrieval window."""
    trace: PulseEnvelope
    transmitted_fraction: float
    echo_time: float
    efficiency: float
    window: Tuple[float, float]
    delay: float
    peak_intensity: float

    def as_dict(self) -> dict:
        return {
            "efficiency": self.efficiency,
            "transmitted_fraction": self.transmitted_fraction,
            "echo_time_s": self.echo_time,
            "echo_delay_s": self.delay,
            "window_centre_s": self.window[0],
            "window_width_s": self.window[1],
            "peak_intensity": self.peak_intensity,
        }


@dataclass(frozen=True)
class AtomEnsembleSample:
    """Discrete emitters: detunings (Hz from the probe carrier) and normalized weights."""
    detunings: np.ndarray
    weights: np.ndarray
    total_weight: float = 1.0

    def __post_init__(self):
        detunings = np.atleast_1d(np.asarray(self.detunings, dtype=float))
        weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if detunings.size == 0:
            raise DomainError("ensemble needs at least one atom")
        if detunings.shape != weights.shape:
            raise DomainError("detunings and weights must have the same length")
        if not np.all(np.isfinite(detunings)):
            raise DomainError("detunings must be finite")
        if np.any(weights < 0) or weights.sum() <= 0:
            raise DomainError("weights must be non-negative with a positive sum")
        object.__setattr__(self, "detunings", detunings)
        object.__setattr__(self, "weights", weights / weights.sum())

    def __len__(self) -> int:
        return self.detunings.size


def gaussian_pulse(times: np.ndarray, centre: float, fwhm: float) -> np.ndarray:
    """Unit-energy Gaussian field whose intensity has FWHM ``fwhm``."""
    field = np.exp(-2.0 * np.log(2.0) * ((times - centre) / fwhm) ** 2)
    norm = np.sqrt(fwhm * np.sqrt(np.pi / (4.0 * np.log(2.0))))
    return field / norm


def mode_overlap(a: np.ndarray, b: np.ndarray, dt: float) -> float:
    """|<a|b>| of two sampled modes, each normalized to unit energy."""
    norm = np.sqrt(np.sum(np.abs(a) ** 2) * np.sum(np.abs(b) ** 2)) * dt
    if norm == 0:
        return 0.0
    return float(np.abs(np.vdot(a, b)) * dt / norm)


def make_pulse_train(
    times: Sequence[float],
    fwhm: float,
    amplitudes: Optional[Sequence[float]] = None,
    dt: float = DEFAULT_DT_S,
    span: float = DEFAULT_SPAN_S,
    carrier_detuning: float = 0.0,
    t0: Optional[float] = None,
) -> PulseEnvelope:
    """
    Gaussian temporal modes on a common time grid.

    Args:
        times: Mode centres (s)
        fwhm: Intensity FWHM of each mode (s)
        amplitudes: Field amplitude per mode (default 1 each)
        dt: Sample period
        span: Trace length
        carrier_detuning: Probe carrier relative to the spectrum grid origin (Hz)
        t0: First sample time (default: earliest centre minus max(10 ns, 5 fwhm))

    Returns:
        PulseEnvelope; each mode has unit energy before amplitude weighting
    """
    if fwhm <= 0:
        raise DomainError(f"pulse fwhm must be positive, got {fwhm}")
    if dt <= 0 or span <= dt:
        raise DomainError("trace span must exceed the sample period")
    centres = np.atleast_1d(np.asarray(times, dtype=float))
    if centres.size == 0:
        raise DomainError("pulse train needs at least one mode")
    weights = np.ones(centres.size) if amplitudes is None else np.asarray(amplitudes, dtype=float)
    if weights.shape != centres.shape:
        raise DomainError(f"{centres.size} pulse times but {weights.size} amplitudes")

    if t0 is None:
        t0 = float(centres.min()) - max(MIN_LEAD_S, 5.0 * fwhm)
    n = int(round(span / dt))
    t = t0 + dt * np.arange(n)
    if centres.min() < t[0] or centres.max() > t[-1]:
        raise DomainError(
            f"pulse times [{centres.min() * 1e9:.2f}, {centres.max() * 1e9:.2f}] ns fall outside the trace "
            f"[{t[0] * 1e9:.2f}, {t[-1] * 1e9:.2f}] ns"
        )
    modes = [gaussian_pulse(t, centre, fwhm) for centre in centres]
    order = np.argsort(centres)
    for a, b in zip(order[:-1], order[1:]):
        overlap = mode_overlap(modes[a], modes[b], dt)
        if overlap > MAX_MODE_OVERLAP:
            logger.warning(
                "pulse modes at %.2f ns and %.2f ns overlap by %.0f%%",
                centres[a] * 1e9, centres[b] * 1e9, 100 * overlap,
            )

    field = np.zeros(n, dtype=complex)
    for mode, amplitude in zip(modes, weights):
        field += amplitude * mode
    return PulseEnvelope(t0, dt, field, carrier_detuning)


def _band_limits(freqs: np.ndarray, power: np.ndarray, fraction: float) -> Tuple[float, float]:
    order = np.argsort(freqs)
    f, p = freqs[order], power[order]
    cumulative = np.cumsum(p)
    cumulative /= cumulative[-1]
    tail = 0.5 * (1.0 - fraction)
    lo = f[np.searchsorted(cumulative, tail)]
    hi = f[min(np.searchsorted(cumulative, 1.0 - tail), f.size - 1)]
    return float(lo), float(hi)


def transfer_function(spectrum: ComplexSpectrum, freqs: np.ndarray, dispersion: bool = True) -> np.ndarray:
    """H = exp(-D/2) at arbitrary probe frequencies, unity off the spectrum grid."""
    grid = spectrum.freqs
    re = np.interp(freqs, grid, spectrum.depth.real, left=0.0, right=0.0)
    im = np.interp(freqs, grid, spectrum.depth.imag, left=0.0, right=0.0) if dispersion else 0.0
    return np.exp(-0.5 * (re + 1j * im))


def propagate(
    pulse: PulseEnvelope,
    spectrum: ComplexSpectrum,
    pad_factor: float = 1.0,
    dispersion: bool = True,
    decay_t1: Optional[float] = None,
    decay_reference: Optional[float] = None,
) -> PulseEnvelope:
    """
    Propagate ``pulse`` through the medium described by ``spectrum``.

    Args:
        pulse: Input envelope
        spectrum: Complex optical depth of the medium
        pad_factor: Extra zero padding as a multiple of the trace length
        dispersion: Keep Im D (False propagates with Re D only)
        decay_t1: If set, the radiated field (output minus input) is damped by
            exp(-(t - t_ref) / 2 T1) after ``decay_reference``
        decay_reference: Start of the decay envelope (default: input intensity peak)

    Returns:
        Output envelope on the input's time grid

    Raises:
        DomainError: pulse band not covered by the spectrum grid
        ResizeError: output wraps around the transform window
    """
    if pad_factor < 0:
        raise DomainError(f"pad_factor must be non-negative, got {pad_factor}")
    n = pulse.samples.size
    size = next_fast_len(int(np.ceil(n * (1.0 + pad_factor))))
    padded = np.zeros(size, dtype=complex)
    padded[:n] = pulse.samples

    spectrum_in = fft(padded)
    probe_freqs = pulse.carrier_detuning + fftfreq(size, pulse.dt)
    lo, hi = _band_limits(probe_freqs, np.abs(spectrum_in) ** 2, BAND_ENERGY)
    if lo < spectrum.grid.start or hi > spectrum.grid.stop:
        raise DomainError(
            f"pulse band [{lo / 1e6:.1f}, {hi / 1e6:.1f}] MHz is not inside the spectrum grid "
            f"[{spectrum.grid.start / 1e6:.1f}, {spectrum.grid.stop / 1e6:.1f}] MHz"
        )

    out = ifft(spectrum_in * transfer_function(spectrum, probe_freqs, dispersion))
    power = np.abs(out) ** 2
    total = float(power.sum())
    if total > 0:
        edge = max(1, int(EDGE_FRACTION * size))
        edge_fraction = float((power[:edge].sum() + power[-edge:].sum()) / total)
        if edge_fraction > WRAP_TOLERANCE:
            raise ResizeError(
                f"{edge_fraction:.2e} of the output energy sits at the transform edges; "
                f"lengthen the trace or raise pad_factor",
                edge_fraction=edge_fraction,
            )

    samples = out[:n]
    if decay_t1 is not None:
        if decay_t1 <= 0:
            raise DomainError(f"T1 must be positive, got {decay_t1}")
        t = pulse.times
        t_ref = t[int(np.argmax(pulse.intensity))] if decay_reference is None else decay_reference
        envelope = np.exp(-np.clip(t - t_ref, 0.0, None) / (2.0 * decay_t1))
        samples = pulse.samples + (samples - pulse.samples) * envelope
    return pulse.with_samples(samples)


def _peak_time(times: np.ndarray, intensity: np.ndarray) -> Tuple[float, float]:
    i = int(np.argmax(intensity))
    if 0 < i < intensity.size - 1:
        y0, y1, y2 = intensity[i - 1: i + 2]
        denom = y0 - 2.0 * y1 + y2
        if denom < 0:
            shift = 0.5 * (y0 - y2) / denom
            dt = times[1] - times[0]
            return float(times[i] + shift * dt), float(y1 - 0.25 * (y0 - y2) * shift)
    return float(times[i]), float(intensity[i])


def _window_mask(trace: PulseEnvelope, centre: float, width: float) -> np.ndarray:
    if width <= 0:
        raise DomainError(f"window width must be positive, got {width}")
    lo, hi = centre - 0.5 * width, centre + 0.5 * width
    if lo < trace.t0 or hi > trace.t_end:
        raise DomainError(
            f"window [{lo * 1e9:.2f}, {hi * 1e9:.2f}] ns lies outside the trace "
            f"[{trace.t0 * 1e9:.2f}, {trace.t_end * 1e9:.2f}] ns"
        )
    mask = np.abs(trace.times - centre) <= 0.5 * width
    if not np.any(mask):
        raise DomainError("window holds no samples")
    return mask


def window_energy(trace: PulseEnvelope, centre: float, width: float) -> float:
    """Energy of ``trace`` within |t - centre| <= width / 2."""
    mask = _window_mask(trace, centre, width)
    return float(np.sum(trace.intensity[mask]) * trace.dt)


def echo_efficiency(
    trace: PulseEnvelope,
    reference: PulseEnvelope,
    window_centre: float,
    window_width: float,
) -> EchoReport:
    """
    Echo energy in a window relative to the total reference energy.

    Args:
        trace: Propagated output
        reference: Input propagated through the reference (unpumped) medium
        window_centre: Window centre (s)
        window_width: Window width (s)

    Returns:
        EchoReport with the refined echo peak time and its delay after the
        reference peak
    """
    ref_energy = reference.energy
    if ref_energy <= 0:
        raise DomainError("reference pulse carries no energy")
    mask = _window_mask(trace, window_centre, window_width)
    efficiency = float(np.sum(trace.intensity[mask]) * trace.dt) / ref_energy
    if efficiency > 1.0 + 1e-9:
        raise DomainError(f"window energy exceeds the reference energy ({efficiency:.4f})")

    echo_time, peak = _peak_time(trace.times[mask], trace.intensity[mask])
    ref_peak_time, _ = _peak_time(reference.times, reference.intensity)
    ref_mask = _window_mask(trace, ref_peak_time, window_width)
    transmitted = float(np.sum(trace.intensity[ref_mask]) * trace.dt) / ref_energy

    logger.debug(
        "window %.2f ns +/- %.2f ns: efficiency %.4f%%, echo at %.3f ns",
        window_centre * 1e9, 0.5 * window_width * 1e9, 100 * efficiency, echo_time * 1e9,
    )
    return EchoReport(
        trace=trace,
        transmitted_fraction=min(transmitted, 1.0),
        echo_time=echo_time,
        efficiency=min(efficiency, 1.0),
        window=(window_centre, window_width),
        delay=echo_time - ref_peak_time,
        peak_intensity=peak,
    )


def pulse_spectrum(pulse: PulseEnvelope, detunings: np.ndarray, pad_factor: int = 4) -> np.ndarray:
    """|FFT| of the pulse (peak 1) at detunings from its carrier (Hz)."""
    n = pulse.samples.size
    size = next_fast_len(n * (1 + pad_factor))
    magnitude = np.abs(fft(pulse.samples, n=size))
    freqs = fftfreq(size, pulse.dt)
    order = np.argsort(freqs)
    out = np.interp(np.asarray(detunings, dtype=float), freqs[order], magnitude[order], left=0.0, right=0.0)
    peak = magnitude.max()
    return out / peak if peak > 0 else out


def sample_ensemble(
    spectrum: ComplexSpectrum,
    n_atoms: int,
    spectral_filter: Optional[np.ndarray] = None,
    rng: Optional[np.random.Generator] = None,
    reference: float = 0.0,
) -> AtomEnsembleSample:
    """
    Discretize Re D into weighted emitters.

    Args:
        spectrum: Source spectrum
        n_atoms: Number of emitters; at least the number of non-zero bins keeps every bin
        spectral_filter: Optional per-bin factor (e.g. the pulse spectrum) applied to Re D
        rng: Draw emitters at random from this generator; otherwise deterministic
            quantile sampling is used
        reference: Frequency subtracted from the grid to form detunings (the probe carrier)

    Returns:
        AtomEnsembleSample; ``total_weight`` is the integral of the weighted Re D
    """
    if n_atoms < 1:
        raise DomainError(f"n_atoms must be at least 1, got {n_atoms}")
    density = spectrum.depth.real.copy()
    if spectral_filter is not None:
        factor = np.asarray(spectral_filter, dtype=float)
        if factor.shape != density.shape:
            raise DomainError("spectral filter must match the spectrum grid")
        density = density * factor
    if not np.any(density > 0):
        raise DomainError("spectrum has no absorption to sample")

    detunings = spectrum.freqs - reference
    total_weight = float(density.sum() * spectrum.grid.step)
    nonzero = np.flatnonzero(density > 0)
    if n_atoms >= nonzero.size:
        return AtomEnsembleSample(detunings[nonzero], density[nonzero], total_weight)

    p = density[nonzero] / density[nonzero].sum()
    if rng is not None:
        picks = rng.choice(nonzero.size, size=n_atoms, p=p)
    else:
        quantiles = (np.arange(n_atoms) + 0.5) / n_atoms
        picks = np.minimum(np.searchsorted(np.cumsum(p), quantiles), nonzero.size - 1)
    bins, counts = np.unique(picks, return_counts=True)
    return AtomEnsembleSample(detunings[nonzero[bins]], counts.astype(float), total_weight)


def dipole_sum_echo(
    sample: AtomEnsembleSample,
    times: np.ndarray,
    normalize: bool = True,
    chunk: int = 2 ** 22,
) -> np.ndarray:
    """
    Collective emission |sum_j w_j exp(i 2 pi delta_j t)|^2.

    Args:
        sample: Emitters
        times: Evaluation times (s), measured from the excitation
        normalize: Intensity 1 at t = 0; otherwise scaled by ``total_weight**2``
        chunk: Matrix size limit per block

    Returns:
        Intensity at each time
    """
    t = np.asarray(times, dtype=float)
    flat = t.ravel()
    out = np.empty(flat.size)
    rows = max(1, chunk // len(sample))
    for i in range(0, flat.size, rows):
        phase = np.exp(2j * np.pi * flat[i:i + rows, None] * sample.detunings[None, :])
        out[i:i + rows] = np.abs(phase @ sample.weights) ** 2
    if not normalize:
        out *= sample.total_weight ** 2
    return out.reshape(t.shape)


def excited_decay_factor(t: float, t1: float = CS133_T1_S) -> float:
    """Efficiency factor exp(-t / T1) from excited-state decay over a storage time ``t``."""
    if t1 <= 0:
        raise DomainError(f"T1 must be positive, got {t1}")
    return float(np.exp(-max(t, 0.0) / t1))
