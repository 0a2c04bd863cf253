"""
Two-stage optical pumping of the ground-state velocity distribution.

Stage one (prep) empties F=4 uniformly in velocity; stage two (velocity-selective
pumping, VSP) refills F=4 from F=3 for the velocity classes resonant with each
pump tone. Population moves between the two ground levels only, so the norm is
conserved exactly up to rounding.
"""

import logging
from dataclasses import dataclass
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from scipy.special import erf, erfc

from functions.atomic_model import (
    AtomSpecies,
    LineTable,
    detuning_to_velocity,
    thermal_speed,
    velocity_to_detuning,
)
from functions.errors import DomainError

logger = logging.getLogger(__name__)

# Ground-state degeneracies 2F+1 for F=3 and F=4
F3_FRACTION = 7.0 / 16.0
F4_FRACTION = 9.0 / 16.0
# Largest tolerated loss of the thermal norm outside the velocity grid
MAX_NORM_LOSS = 1e-4


@dataclass(frozen=True)
class VelocityGridSpec:
    """Uniform velocity grid covering [-v_max, v_max] with ``points`` samples."""
    v_max: float = 1200.0
    points: int = 2 ** 14

    def __post_init__(self):
        if self.v_max <= 0:
            raise DomainError(f"v_max must be positive, got {self.v_max}")
        if self.points < 2:
            raise DomainError(f"velocity grid needs at least 2 points, got {self.points}")

    def values(self) -> np.ndarray:
        return np.linspace(-self.v_max, self.v_max, self.points)


def _frozen(values: np.ndarray) -> np.ndarray:
    out = np.array(values, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class VelocityDistribution:
    """Ground-state population densities (per m/s) on a uniform velocity grid."""
    grid: np.ndarray
    pop_f3: np.ndarray
    pop_f4: np.ndarray
    total_population: float

    def __post_init__(self):
        grid = _frozen(self.grid)
        if grid.ndim != 1 or grid.size < 2:
            raise DomainError("velocity grid must be a 1-D array with at least 2 samples")
        steps = np.diff(grid)
        if np.any(steps <= 0):
            raise DomainError("velocity grid must be strictly increasing")
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
            raise DomainError("velocity grid must be uniform")
        for name in ("pop_f3", "pop_f4"):
            values = _frozen(getattr(self, name))
            if values.shape != grid.shape:
                raise DomainError(f"{name} shape {values.shape} does not match grid {grid.shape}")
            if np.any(values < 0):
                raise DomainError(f"{name} has negative densities")
            object.__setattr__(self, name, values)
        object.__setattr__(self, "grid", grid)

    @property
    def dv(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def population_sum(self) -> float:
        """Current value of sum(pop_f3 + pop_f4) * dv."""
        return float(np.sum(self.pop_f3 + self.pop_f4) * self.dv)

    def f4_population(self) -> float:
        return float(np.sum(self.pop_f4) * self.dv)

    def replace(self, pop_f3: np.ndarray, pop_f4: np.ndarray) -> "VelocityDistribution":
        return VelocityDistribution(self.grid, pop_f3, pop_f4, self.total_population)


@dataclass(frozen=True)
class GaussianClass:
    """A Gaussian velocity class: centre (m/s), rms width (m/s) and integrated population."""
    velocity: float
    sigma: float
    area: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise DomainError(f"class width must be positive, got {self.sigma}")
        if self.area < 0:
            raise DomainError(f"class population must be non-negative, got {self.area}")

    def density(self, v: np.ndarray) -> np.ndarray:
        return self.area * np.exp(-0.5 * ((v - self.velocity) / self.sigma) ** 2) / (self.sigma * np.sqrt(2.0 * np.pi))


@dataclass(frozen=True)
class PumpConfig:
    """
    Velocity-selective pump sequence.

    Tones are ordered carrier, then for each modulation frequency the lower and
    upper sideband. ``modulation_frame='probe'`` reads each modulation frequency
    as the comb spacing it should produce on the probe (D2) axis; ``'pump'``
    applies it to the pump laser unchanged.
    """
    carrier_detuning: float
    modulation_freqs: Tuple[float, ...]
    tone_weights: Tuple[float, ...]
    effective_linewidth: float
    pump_rate: float
    duration: float
    addressed_line: Tuple[int, int]
    direction: Literal["co", "counter"] = "counter"
    modulation_frame: Literal["probe", "pump"] = "probe"

    def __post_init__(self):
        object.__setattr__(self, "modulation_freqs", tuple(float(f) for f in self.modulation_freqs))
        object.__setattr__(self, "tone_weights", tuple(float(w) for w in self.tone_weights))
        object.__setattr__(self, "addressed_line", tuple(int(x) for x in self.addressed_line))
        if self.effective_linewidth <= 0:
            raise DomainError(f"effective_linewidth must be positive, got {self.effective_linewidth}")
        if self.duration < 0:
            raise DomainError(f"duration must be non-negative, got {self.duration}")
        if self.pump_rate < 0:
            raise DomainError(f"pump_rate must be non-negative, got {self.pump_rate}")
        if any(w < 0 for w in self.tone_weights):
            raise DomainError("tone weights must be non-negative")
        expected = 1 + 2 * len(self.modulation_freqs)
        if len(self.tone_weights) != expected:
            raise DomainError(
                f"expected {expected} tone weights (carrier + 2 per modulation frequency), "
                f"got {len(self.tone_weights)}"
            )
        if self.modulation_frame not in ("probe", "pump"):
            raise DomainError(f"unknown modulation frame {self.modulation_frame!r}")


@dataclass(frozen=True)
class PumpTone:
    """One pump frequency component and where it lands."""
    detuning: float
    weight: float
    velocity: float
    probe_offset: float


def thermal_populations(species: AtomSpecies, grid_spec: VelocityGridSpec = VelocityGridSpec()) -> VelocityDistribution:
    """
    Maxwell-Boltzmann velocity density along the beam axis, integrated over each bin.

    Bin edges sit halfway between grid points; each bin holds
    (erf(v_hi / u) - erf(v_lo / u)) / 2 of the thermal norm before renormalization.

    Args:
        species: Species and temperature
        grid_spec: Velocity grid

    Returns:
        Distribution with total population 1, split 7/16 : 9/16 between F=3 and F=4
    """
    u = thermal_speed(species)
    loss = float(erfc(grid_spec.v_max / u))
    if loss > MAX_NORM_LOSS:
        raise DomainError(
            f"velocity grid +/-{grid_spec.v_max:g} m/s loses {loss:.2e} of the thermal norm "
            f"(thermal speed {u:.1f} m/s)"
        )
    if grid_spec.v_max < 4.0 * u:
        logger.warning("velocity grid spans less than 4 thermal speeds (%.1f m/s)", u)

    v = grid_spec.values()
    dv = v[1] - v[0]
    edges = np.append(v - 0.5 * dv, v[-1] + 0.5 * dv)
    mass = 0.5 * np.diff(erf(edges / u))
    density = mass / (np.sum(mass) * dv)
    return VelocityDistribution(v, F3_FRACTION * density, F4_FRACTION * density, 1.0)


def gaussian_class_distribution(
    grid_spec: VelocityGridSpec,
    classes: Sequence[GaussianClass],
    pop_f3: Optional[np.ndarray] = None,
) -> VelocityDistribution:
    """Distribution whose F=4 density is a sum of Gaussian classes (test fixtures, Voigt path)."""
    v = grid_spec.values()
    pop4 = np.zeros_like(v)
    for cls in classes:
        pop4 += cls.density(v)
    pop3 = np.zeros_like(v) if pop_f3 is None else np.asarray(pop_f3, dtype=float)
    total = float(np.sum(pop3 + pop4) * (v[1] - v[0]))
    return VelocityDistribution(v, pop3, pop4, total)


def apply_prep_pump(dist: VelocityDistribution, efficiency: float) -> VelocityDistribution:
    """Move a fraction ``efficiency`` of F=4 into F=3, uniformly in velocity."""
    if not 0.0 <= efficiency <= 1.0:
        raise DomainError(f"prep efficiency must lie in [0, 1], got {efficiency}")
    moved = dist.pop_f4 * efficiency
    return dist.replace(dist.pop_f3 + moved, dist.pop_f4 - moved)


def pump_tones(cfg: PumpConfig, line_table: LineTable) -> List[PumpTone]:
    """
    Enumerate pump tones with their resonant velocity and probe-frame position.

    Args:
        cfg: Pump configuration
        line_table: Pump manifold table holding ``cfg.addressed_line``

    Returns:
        Tones in the order carrier, f1-, f1+, f2-, f2+, ...
    """
    line = line_table.line(*cfg.addressed_line)
    probe_wavelength = line_table.species.d2_wavelength
    scale = probe_wavelength / line.wavelength if cfg.modulation_frame == "probe" else 1.0

    detunings = [cfg.carrier_detuning]
    for f_mod in cfg.modulation_freqs:
        detunings.extend([cfg.carrier_detuning - f_mod * scale, cfg.carrier_detuning + f_mod * scale])

    tones = []
    for detuning, weight in zip(detunings, cfg.tone_weights):
        velocity = detuning_to_velocity(line, detuning, cfg.direction)
        tones.append(PumpTone(detuning, weight, velocity, velocity / probe_wavelength))
    return tones


def pump_rate_profile(grid: np.ndarray, cfg: PumpConfig, line_table: LineTable) -> np.ndarray:
    """Velocity-resolved F=3 -> F=4 transfer rate (1/s) summed over all tones."""
    line = line_table.line(*cfg.addressed_line)
    resonant = velocity_to_detuning(line, np.asarray(grid, dtype=float), cfg.direction)
    half_width = 0.5 * cfg.effective_linewidth
    rate = np.zeros_like(np.asarray(grid, dtype=float))
    for tone in pump_tones(cfg, line_table):
        if tone.weight == 0.0:
            continue
        x = (tone.detuning - resonant) / half_width
        rate += tone.weight / (1.0 + x * x)
    return cfg.pump_rate * rate


def transfer_fraction(dist: VelocityDistribution, cfg: PumpConfig, line_table: LineTable) -> np.ndarray:
    """Fraction 1 - exp(-rate * duration) of F=3 moved to F=4 in each velocity bin."""
    return -np.expm1(-pump_rate_profile(dist.grid, cfg, line_table) * cfg.duration)


def apply_vsp(dist: VelocityDistribution, cfg: PumpConfig, line_table: LineTable) -> VelocityDistribution:
    """
    Velocity-selectively pump F=3 population back into F=4.

    Args:
        dist: Distribution after the prep stage
        cfg: Pump tones, linewidth, rate and duration
        line_table: Pump manifold (D1) table

    Returns:
        New distribution; total population unchanged
    """
    if not line_table.has_line(*cfg.addressed_line):
        raise DomainError(f"addressed line {cfg.addressed_line} not in {line_table.manifold} table")
    for tone in pump_tones(cfg, line_table):
        if tone.weight > 0 and not dist.grid[0] <= tone.velocity <= dist.grid[-1]:
            raise DomainError(
                f"pump tone at {tone.detuning / 1e6:.3f} MHz resonates with v = {tone.velocity:.1f} m/s, "
                f"outside the velocity grid"
            )
    if cfg.duration == 0.0:
        return dist

    moved = dist.pop_f3 * transfer_fraction(dist, cfg, line_table)
    logger.debug("VSP moved %.4e of the population into F=4", float(np.sum(moved) * dist.dv))
    return dist.replace(dist.pop_f3 - moved, dist.pop_f4 + moved)
