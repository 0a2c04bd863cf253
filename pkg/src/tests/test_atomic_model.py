"""
Tests for the caesium level structure, line tables and velocity/detuning maps.
"""

import numpy as np
import pytest

from functions.atomic_model import (
    D2_DATA_PATH,
    AtomSpecies,
    caesium,
    d2_line_table,
    detuning_to_velocity,
    doppler_fwhm,
    load_line_table,
    thermal_speed,
    velocity_to_detuning,
)
from functions.errors import ConfigurationError, DomainError


def _tampered_copy(tmp_path, old: str, new: str) -> str:
    with open(D2_DATA_PATH, "r", encoding="utf-8") as f:
        text = f.read()
    assert old in text
    path = tmp_path / "cs133_d2.dat"
    path.write_text(text.replace(old, new, 1), encoding="utf-8")
    return str(path)


class TestLineTables:
    """Test the bundled hyperfine data."""

    def test_d2_probe_lines(self, d2_table):
        """F=4 probe lines sit at 0, -251.09 and -452.38 MHz."""
        offsets = {line.excited_f: line.offset for line in d2_table.lines}
        assert set(offsets) == {3, 4, 5}
        assert offsets[5] == 0.0
        assert offsets[4] == pytest.approx(-251.0916e6)
        assert offsets[3] == pytest.approx(-452.3787e6)

    def test_d2_strengths_sum_to_one(self, d2_table):
        """Relative strengths out of F=4 are normalized."""
        assert sum(line.strength for line in d2_table.lines) == pytest.approx(1.0, abs=1e-9)

    def test_d1_reference_line(self, d1_table):
        """The pump manifold is referenced to F=3 -> F'=4."""
        assert len(d1_table.lines) == 4
        assert d1_table.line(3, 4).offset == 0.0
        assert d1_table.line(3, 3).offset == pytest.approx(-1167.68e6)

    def test_unknown_line(self, d2_table):
        """Looking up a missing transition raises DomainError."""
        with pytest.raises(DomainError):
            d2_table.line(4, 2)
        assert not d2_table.has_line(4, 2)

    def test_checksum_mismatch(self, tmp_path, cs):
        """Editing a data row without updating the checksum is rejected."""
        path = _tampered_copy(tmp_path, "-251091600", "-251091601")
        with pytest.raises(ConfigurationError, match="checksum"):
            load_line_table(path, cs, ground_f=4)

    def test_single_source_rejected(self, tmp_path, cs):
        """A data file must cite two independent sources."""
        with open(D2_DATA_PATH, "r", encoding="utf-8") as f:
            lines = f.readlines()
        first_source = next(i for i, line in enumerate(lines) if line.startswith("# source:"))
        path = tmp_path / "cs133_d2.dat"
        path.write_text("".join(lines[:first_source] + lines[first_source + 1:]), encoding="utf-8")
        with pytest.raises(ConfigurationError, match="two independent sources"):
            load_line_table(str(path), cs)

    def test_malformed_row(self, tmp_path, cs):
        """Rows need exactly four fields."""
        path = _tampered_copy(tmp_path, "4 4 -251091600 0.291666666667", "4 4 -251091600")
        with pytest.raises(ConfigurationError, match="expected 4 fields"):
            load_line_table(path, cs)

    def test_missing_file(self, tmp_path, cs):
        with pytest.raises(ConfigurationError):
            d2_line_table(cs, path=str(tmp_path / "missing.dat"))


class TestThermalScales:
    """Test thermal speed and Doppler width."""

    def test_thermal_speed_room_temperature(self, cs):
        """sqrt(2kT/m) is about 191.8 m/s at 294 K."""
        assert thermal_speed(cs) == pytest.approx(191.8, rel=1e-3)

    def test_d2_doppler_width(self, cs, d2_table):
        """The D2 Doppler FWHM is about 375 MHz at room temperature."""
        assert doppler_fwhm(cs, d2_table.line(4, 5)) == pytest.approx(374.7e6, rel=2e-3)

    def test_doppler_width_scales_with_temperature(self, d2_table):
        """Width grows as sqrt(T)."""
        line = d2_table.line(4, 5)
        ratio = doppler_fwhm(caesium(4 * 294.0), line) / doppler_fwhm(caesium(294.0), line)
        assert ratio == pytest.approx(2.0, rel=1e-12)

    def test_invalid_species(self):
        with pytest.raises(DomainError):
            caesium(0.0)
        with pytest.raises(DomainError):
            AtomSpecies(mass=-1.0, temperature=294.0, d1_wavelength=894e-9, d2_wavelength=852e-9)


class TestVelocityMaps:
    """Test detuning <-> velocity conversions."""

    def test_round_trip(self, d2_table):
        """1000 random detunings within +/-2 GHz survive detuning -> velocity -> detuning."""
        line = d2_table.line(4, 5)
        detunings = np.random.default_rng(2019).uniform(-2e9, 2e9, 1000)
        for direction in ("co", "counter"):
            back = velocity_to_detuning(line, detuning_to_velocity(line, detunings, direction), direction)
            np.testing.assert_allclose(back, detunings, rtol=1e-12, atol=1e-3)

    def test_map_is_odd_and_linear(self, d2_table):
        line = d2_table.line(4, 5)
        detunings = np.random.default_rng(7).uniform(-2e9, 2e9, 1000)
        v = detuning_to_velocity(line, detunings)
        np.testing.assert_allclose(detuning_to_velocity(line, -detunings), -v, rtol=1e-12)
        np.testing.assert_allclose(detuning_to_velocity(line, 3.0 * detunings), 3.0 * v, rtol=1e-12)

    def test_counter_propagating_flips_sign(self, d1_table):
        line = d1_table.line(3, 4)
        assert detuning_to_velocity(line, 100e6, "counter") == pytest.approx(-detuning_to_velocity(line, 100e6, "co"))

    def test_scalar_in_scalar_out(self, d2_table):
        """Scalars return floats; one wavelength of detuning per m/s."""
        line = d2_table.line(4, 5)
        v = detuning_to_velocity(line, 1e6)
        assert isinstance(v, float)
        assert v == pytest.approx(1e6 * line.wavelength)

    def test_unknown_direction(self, d2_table):
        with pytest.raises(DomainError):
            detuning_to_velocity(d2_table.line(4, 5), 0.0, "sideways")
