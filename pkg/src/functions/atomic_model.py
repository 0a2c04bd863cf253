"""
Caesium level structure, transition constants and velocity/detuning maps.

Hyperfine offsets and relative strengths are read from the versioned data files in
``src/data``; nothing here hard-codes a splitting. All frequencies are ordinary
frequencies in Hz.
"""

import hashlib
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from scipy import constants

from functions.errors import ConfigurationError, DomainError

logger = logging.getLogger(__name__)

# Data directory (one level up from src/functions/)
FUNCTIONS_DIR = os.path.dirname(os.path.abspath(__file__))
SRC_DIR = os.path.dirname(FUNCTIONS_DIR)
DATA_DIR = os.path.join(SRC_DIR, "data")
D2_DATA_PATH = os.path.join(DATA_DIR, "cs133_d2.dat")
D1_DATA_PATH = os.path.join(DATA_DIR, "cs133_d1.dat")

CS133_MASS_U = 132.905451933
CS133_D1_WAVELENGTH_M = 894.59295986e-9
CS133_D2_WAVELENGTH_M = 852.34727582e-9
# 6P3/2 excited-state lifetime
CS133_T1_S = 30.4e-9

Direction = Literal["co", "counter"]
ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class AtomSpecies:
    """Atomic species at a given vapour temperature."""
    mass: float
    temperature: float
    d1_wavelength: float
    d2_wavelength: float
    name: str = "Cs-133"

    def __post_init__(self):
        if self.mass <= 0:
            raise DomainError(f"mass must be positive, got {self.mass}")
        if self.temperature <= 0:
            raise DomainError(f"temperature must be positive, got {self.temperature}")
        if self.d1_wavelength <= 0 or self.d2_wavelength <= 0:
            raise DomainError("wavelengths must be positive")
        if self.d1_wavelength <= self.d2_wavelength:
            raise DomainError("D1 wavelength must exceed D2 wavelength for caesium")


def caesium(temperature_k: float = 294.0) -> AtomSpecies:
    """Cs-133 with the bundled D1/D2 wavelengths."""
    return AtomSpecies(
        mass=CS133_MASS_U * constants.atomic_mass,
        temperature=temperature_k,
        d1_wavelength=CS133_D1_WAVELENGTH_M,
        d2_wavelength=CS133_D2_WAVELENGTH_M,
    )


@dataclass(frozen=True)
class TransitionLine:
    """One hyperfine optical transition F -> F'."""
    ground_f: int
    excited_f: int
    offset: float
    strength: float
    natural_linewidth: float
    wavelength: float

    def __post_init__(self):
        if self.natural_linewidth <= 0:
            raise ConfigurationError(f"natural linewidth must be positive for {self.name}")
        if self.strength < 0:
            raise ConfigurationError(f"negative line strength for {self.name}")
        if self.wavelength <= 0:
            raise ConfigurationError(f"wavelength must be positive for {self.name}")

    @property
    def label(self) -> Tuple[int, int]:
        return (self.ground_f, self.excited_f)

    @property
    def name(self) -> str:
        return f"F={self.ground_f}->F'={self.excited_f}"


@dataclass(frozen=True)
class LineTable:
    """Ordered set of lines of one manifold, offsets relative to ``reference_label``."""
    species: AtomSpecies
    lines: Tuple[TransitionLine, ...]
    reference_label: Tuple[int, int]
    manifold: str = ""
    metadata: Dict[str, object] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        labels = [line.label for line in self.lines]
        if len(set(labels)) != len(labels):
            raise ConfigurationError(f"duplicate line labels in {self.manifold} table: {labels}")
        zero = [line for line in self.lines if line.offset == 0.0]
        if len(zero) != 1:
            raise ConfigurationError(
                f"{self.manifold} table must have exactly one line at offset 0, found {len(zero)}"
            )
        if zero[0].label != tuple(self.reference_label):
            raise ConfigurationError(
                f"reference {self.reference_label} does not sit at offset 0 in {self.manifold} table"
            )

    def line(self, ground_f: int, excited_f: int) -> TransitionLine:
        """Look up a line by its (F, F') label."""
        for line in self.lines:
            if line.label == (ground_f, excited_f):
                return line
        raise DomainError(f"line F={ground_f}->F'={excited_f} not in {self.manifold} table")

    def has_line(self, ground_f: int, excited_f: int) -> bool:
        return any(line.label == (ground_f, excited_f) for line in self.lines)

    @property
    def wavelength(self) -> float:
        return self.lines[0].wavelength


def _data_digest(rows: List[str]) -> str:
    return hashlib.sha256("\n".join(rows).encode("utf-8")).hexdigest()


def read_line_file(path: str) -> Tuple[Dict[str, object], List[Tuple[int, int, float, float]]]:
    """
    Parse a line data file.

    Args:
        path: Path to a ``ground_F excited_F offset_Hz rel_strength`` table

    Returns:
        Tuple of (header dict, list of rows). Repeated header keys such as
        ``source`` are collected into lists.
    """
    if not os.path.exists(path):
        raise ConfigurationError(f"line data file not found: {path}")

    header: Dict[str, object] = {}
    rows: List[Tuple[int, int, float, float]] = []
    data_lines: List[str] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            text = raw.strip()
            if not text:
                continue
            if text.startswith("#"):
                body = text.lstrip("#").strip()
                if ":" in body:
                    key, value = body.split(":", 1)
                    key, value = key.strip(), value.strip()
                    if key == "source":
                        header.setdefault("sources", []).append(value)
                    else:
                        header[key] = value
                continue
            parts = text.split()
            if len(parts) != 4:
                raise ConfigurationError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
            try:
                rows.append((int(parts[0]), int(parts[1]), float(parts[2]), float(parts[3])))
            except ValueError as e:
                raise ConfigurationError(f"{path}:{lineno}: {e}") from e
            data_lines.append(text)

    for key in ("wavelength_m", "natural_linewidth_hz", "reference", "sha256"):
        if key not in header:
            raise ConfigurationError(f"{path}: header is missing '{key}'")
    if len(header.get("sources", [])) < 2:
        raise ConfigurationError(f"{path}: header must cite two independent sources")
    if not rows:
        raise ConfigurationError(f"{path}: no transition rows")

    digest = _data_digest(data_lines)
    if digest != header["sha256"]:
        raise ConfigurationError(f"{path}: checksum mismatch (header {header['sha256']}, data {digest})")
    return header, rows


def load_line_table(
    path: str,
    species: AtomSpecies,
    ground_f: Optional[int] = None,
) -> LineTable:
    """
    Build a LineTable from a bundled data file.

    Args:
        path: Data file path
        species: Species the table belongs to
        ground_f: Keep only lines from this ground level (None keeps all)

    Returns:
        LineTable ordered as in the file
    """
    header, rows = read_line_file(path)
    try:
        wavelength = float(header["wavelength_m"])
        linewidth = float(header["natural_linewidth_hz"])
        ref_g, ref_e = (int(x) for x in str(header["reference"]).split())
    except ValueError as e:
        raise ConfigurationError(f"{path}: malformed header value: {e}") from e

    lines = tuple(
        TransitionLine(
            ground_f=g,
            excited_f=e,
            offset=offset,
            strength=strength,
            natural_linewidth=linewidth,
            wavelength=wavelength,
        )
        for g, e, offset, strength in rows
        if ground_f is None or g == ground_f
    )
    table = LineTable(
        species=species,
        lines=lines,
        reference_label=(ref_g, ref_e),
        manifold=str(header.get("manifold", "")),
        metadata=header,
    )
    logger.debug("loaded %d %s lines from %s", len(lines), table.manifold, path)
    return table


def d2_line_table(species: AtomSpecies, path: str = D2_DATA_PATH) -> LineTable:
    """The three F=4 -> F'=3,4,5 probe lines, F'=5 at offset 0."""
    return load_line_table(path, species, ground_f=4)


def d1_line_table(species: AtomSpecies, path: str = D1_DATA_PATH) -> LineTable:
    """All four D1 lines, F=3 -> F'=4 at offset 0 (the pump manifold)."""
    return load_line_table(path, species)


def thermal_speed(species: AtomSpecies) -> float:
    """Most probable speed sqrt(2kT/m) in m/s."""
    return float(np.sqrt(2.0 * constants.k * species.temperature / species.mass))


def doppler_fwhm(species: AtomSpecies, line: TransitionLine) -> float:
    """FWHM in Hz of the single-line Doppler profile, sqrt(8 ln2 kT/m) / lambda."""
    if species.temperature <= 0:
        raise DomainError(f"temperature must be positive, got {species.temperature}")
    return float(np.sqrt(8.0 * np.log(2.0) * constants.k * species.temperature / species.mass) / line.wavelength)


def _direction_sign(direction: Direction) -> float:
    if direction == "co":
        return 1.0
    if direction == "counter":
        return -1.0
    raise DomainError(f"direction must be 'co' or 'counter', got {direction!r}")


def _scalar_or_array(values: np.ndarray) -> ArrayLike:
    return float(values) if values.ndim == 0 else values


def detuning_to_velocity(line: TransitionLine, detuning: ArrayLike, direction: Direction = "co") -> ArrayLike:
    """
    Velocity class brought into resonance by a beam detuned from ``line``.

    A beam travelling along +z (``co`` with the probe) is resonant with atoms at
    v = detuning * lambda; a counter-propagating beam selects v = -detuning * lambda.
    """
    return _scalar_or_array(_direction_sign(direction) * np.asarray(detuning, dtype=float) * line.wavelength)


def velocity_to_detuning(line: TransitionLine, velocity: ArrayLike, direction: Direction = "co") -> ArrayLike:
    """Inverse of :func:`detuning_to_velocity`."""
    return _scalar_or_array(_direction_sign(direction) * np.asarray(velocity, dtype=float) / line.wavelength)
