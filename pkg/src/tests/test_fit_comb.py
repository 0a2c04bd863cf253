"""
Tests for comb and single-peak fitting.
"""

import logging

import numpy as np
import pytest

from functions.errors import DomainError, FitError, NoCombError
from functions.spectral import (
    FOUR_LN2,
    ComplexSpectrum,
    CombParams,
    FrequencyGrid,
    comb_bandwidth,
    comb_model,
    fit_comb,
    fit_peak,
    tooth_depths,
)

WINDOW = (-310e6, 310e6)


def _guess(m_teeth: int = 6, delta: float = 98e6, first: float = -245e6) -> CombParams:
    return CombParams.build(delta, 40e6, 0.5, 0.2, m_teeth, first_tooth=first)


class TestFitComb:
    """Test the equal-tooth comb fit."""

    def test_recovers_parameters(self, comb_spectrum, caplog):
        """A clean comb is recovered from a perturbed guess."""
        spectrum, truth = comb_spectrum
        with caplog.at_level(logging.INFO):
            fitted = fit_comb(spectrum, WINDOW, _guess())
        assert fitted.delta == pytest.approx(truth.delta, rel=1e-3)
        assert fitted.gamma == pytest.approx(truth.gamma, rel=1e-3)
        assert fitted.d == pytest.approx(truth.d, rel=1e-3)
        assert fitted.d0 == pytest.approx(truth.d0, rel=1e-3)
        assert fitted.first_tooth == pytest.approx(truth.first_tooth, abs=0.1e6)
        assert fitted.finesse == pytest.approx(fitted.delta / fitted.gamma)
        assert fitted.residual < 1e-6
        assert "comb fit" in caplog.text

    def test_bandwidth_counts_deep_teeth(self, comb_spectrum):
        """Six teeth above half the median depth span 600 MHz."""
        spectrum, _ = comb_spectrum
        fitted = fit_comb(spectrum, WINDOW, _guess())
        assert fitted.bandwidth == pytest.approx(600e6, rel=1e-6)
        assert len(fitted.tooth_depths) == 8

    def test_fixed_spacing(self, comb_spectrum):
        """With fix_delta the spacing is taken from the guess."""
        spectrum, truth = comb_spectrum
        fitted = fit_comb(spectrum, WINDOW, _guess(delta=100e6, first=-248e6), fix_delta=True)
        assert fitted.delta == 100e6
        assert fitted.gamma == pytest.approx(truth.gamma, rel=1e-3)
        assert fitted.d == pytest.approx(truth.d, rel=1e-3)

    def test_flat_spectrum_has_no_comb(self):
        """A flat background raises NoCombError carrying d0."""
        grid = FrequencyGrid.symmetric(0.0, 1e9, 20001)
        flat = ComplexSpectrum(grid, np.full(grid.count, 0.3))
        with pytest.raises(NoCombError) as excinfo:
            fit_comb(flat, WINDOW, _guess())
        assert excinfo.value.d0 == pytest.approx(0.3, rel=1e-9)

    def test_broad_teeth_recovered(self):
        """An 83.7 MHz comb of 45 MHz teeth (d=0.55, d0=0.2) is recovered within 2%."""
        grid = FrequencyGrid.symmetric(0.0, 1e9, 20001)
        truth = CombParams.build(83.7e6, 45e6, 0.55, 0.2, 6, first_tooth=-209.25e6)
        spectrum = ComplexSpectrum(grid, comb_model(grid.freqs, truth))
        guess = CombParams.build(80e6, 38e6, 0.45, 0.25, 6, first_tooth=-200e6)
        fitted = fit_comb(spectrum, (-320e6, 320e6), guess)
        for name in ("delta", "gamma", "d", "d0"):
            assert getattr(fitted, name) == pytest.approx(getattr(truth, name), rel=0.02)

    def test_refit_of_fitted_model_is_unchanged(self, comb_spectrum):
        """Fitting the fitted model again returns the same parameters."""
        spectrum, _ = comb_spectrum
        fitted = fit_comb(spectrum, WINDOW, _guess())
        model = ComplexSpectrum(spectrum.grid, comb_model(spectrum.freqs, fitted))
        refitted = fit_comb(model, WINDOW, fitted)
        for name in ("delta", "gamma", "d", "d0", "first_tooth"):
            assert getattr(refitted, name) == pytest.approx(getattr(fitted, name), rel=1e-6)

    def test_depth_below_three_rms_is_no_comb(self):
        """A shallow comb under a ripple the model cannot follow is rejected."""
        grid = FrequencyGrid.symmetric(0.0, 1e9, 20001)
        freqs = grid.freqs
        shallow = CombParams.build(100e6, 30e6, 0.02, 0.5, 6, first_tooth=-250e6)
        re = comb_model(freqs, shallow) + 0.1 * np.cos(2 * np.pi * freqs / 23e6)
        with pytest.raises(NoCombError, match="below") as excinfo:
            fit_comb(ComplexSpectrum(grid, re), WINDOW, _guess(delta=100e6, first=-250e6))
        assert excinfo.value.residual > 0.05
        assert excinfo.value.best.d < 3 * excinfo.value.residual

    def test_depth_above_three_rms_is_a_comb(self):
        """The same ripple under a comb well above three times the fit rms passes."""
        grid = FrequencyGrid.symmetric(0.0, 1e9, 20001)
        freqs = grid.freqs
        deep = CombParams.build(100e6, 30e6, 1.0, 0.5, 6, first_tooth=-250e6)
        re = comb_model(freqs, deep) + 0.1 * np.cos(2 * np.pi * freqs / 23e6)
        fitted = fit_comb(ComplexSpectrum(grid, re), WINDOW, _guess(delta=100e6, first=-250e6))
        assert fitted.d >= 3 * fitted.residual
        assert fitted.delta == pytest.approx(100e6, rel=0.02)

    def test_out_of_budget(self, comb_spectrum):
        """Running out of evaluations raises FitError with the best parameters so far."""
        spectrum, _ = comb_spectrum
        with pytest.raises(FitError) as excinfo:
            fit_comb(spectrum, WINDOW, _guess(), max_nfev=1)
        assert not isinstance(excinfo.value, NoCombError)
        assert isinstance(excinfo.value.best, CombParams)
        assert excinfo.value.residual > 0

    def test_window_too_narrow(self, comb_spectrum):
        spectrum, _ = comb_spectrum
        with pytest.raises(DomainError):
            fit_comb(spectrum, (0.0, 50e6), _guess())

    def test_window_outside_grid(self, comb_spectrum):
        spectrum, _ = comb_spectrum
        with pytest.raises(DomainError, match="too few samples"):
            fit_comb(spectrum, (2e9, 3e9), _guess())


class TestToothDepths:
    """Test the per-tooth linear fit behind the bandwidth."""

    def test_unequal_teeth(self):
        grid = FrequencyGrid.symmetric(0.0, 1e9, 20001)
        heights = [0.2, 1.0, 0.8, 0.6]
        freqs = grid.freqs
        re = 0.1 + sum(h * np.exp(-FOUR_LN2 * ((freqs - (-150e6 + 100e6 * k)) / 30e6) ** 2)
                       for k, h in enumerate(heights))
        spectrum = ComplexSpectrum(grid, re)
        centres, depths, background, rms = tooth_depths(spectrum, -150e6, 100e6, 30e6, 4, (-200e6, 200e6))
        assert centres.size == 6
        np.testing.assert_allclose(depths, [0.0] + heights + [0.0], atol=1e-9)
        assert background == pytest.approx(0.1, abs=1e-9)
        assert rms < 1e-9

    def test_bandwidth_rule(self):
        """Median of [0.01, 0.05, 0.2, 1, 1, 1] is 0.6; teeth 1..4 qualify."""
        depths = np.array([0.05, 1.0, 1.0, 0.2, 1.0, 0.01])
        assert comb_bandwidth(depths, 100e6) == pytest.approx(400e6)

    def test_bandwidth_of_nothing(self):
        assert comb_bandwidth(np.array([]), 100e6) == 0.0
        assert comb_bandwidth(np.zeros(4), 100e6) == 0.0


class TestFitPeak:
    """Test the single-feature fit used for the one-class spectrum."""

    def test_gaussian_feature(self):
        grid = FrequencyGrid.symmetric(0.0, 500e6, 10001)
        re = 0.1 + 0.7 * np.exp(-FOUR_LN2 * ((grid.freqs - 5e6) / 45e6) ** 2)
        fit = fit_peak(ComplexSpectrum(grid, re), (-100e6, 100e6))
        assert fit.width == pytest.approx(45e6, rel=1e-3)
        assert fit.centre == pytest.approx(5e6, abs=1e4)
        assert fit.amplitude == pytest.approx(0.7, rel=1e-3)
        assert fit.background == pytest.approx(0.1, abs=1e-3)
        assert set(fit.as_dict()) >= {"peak_centre_hz", "peak_fwhm_hz"}
