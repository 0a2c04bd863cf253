"""
End-to-end scenario runs, artifacts, sweeps and the run ledger.
"""

import os

import numpy as np
import pytest

from functions.afc_theory import echo_time
from functions.errors import DomainError, ScenarioError, StageError
from functions.pipeline import apply_parameter, run_scenario, stage, sweep
from functions.run_db import get_runs_by_hash
from functions.scenario import load_scenario, revalidate
from utils.tables import read_key_values, read_table
from tests.conftest import scenario_path


def _load(name: str):
    return load_scenario(scenario_path(name))


def _with(scenario, section: str, **values):
    data = scenario.model_dump()
    data[section].update(values)
    return revalidate(data)


def _files(root) -> list:
    found = []
    for dirpath, _, filenames in os.walk(root):
        found.extend(os.path.join(dirpath, f) for f in filenames)
    return found


class TestStage:
    """Test the stage wrapper."""

    def test_wraps_domain_errors(self):
        timings = {}
        with pytest.raises(StageError) as excinfo:
            with stage("spectrum", timings):
                raise DomainError("grid too narrow")
        assert excinfo.value.stage == "spectrum"
        assert isinstance(excinfo.value.cause, DomainError)
        assert "spectrum" in timings

    def test_other_errors_pass_through(self):
        with pytest.raises(KeyError):
            with stage("fit", {}):
                raise KeyError("x")


@pytest.mark.integration
@pytest.mark.slow
class TestSpectrumScenarios:
    """Test the comb and single-class spectra."""

    def test_single_class_features(self, tmp_path):
        """One class shows the F'=3, 4, 5 features at their hyperfine separations, about 45 MHz wide."""
        result = run_scenario(_load("fig2_single_class"), output_root=str(tmp_path))
        assert result.peak.width == pytest.approx(45e6, abs=5e6)
        assert result.peak.centre == pytest.approx(0.0, abs=5e6)
        peaks = np.array(result.peaks_hz)
        found = []
        for expected in (-452.3787e6, -251.0916e6, 0.0):
            nearest = peaks[np.argmin(np.abs(peaks - expected))]
            assert abs(nearest - expected) < 5e6
            found.append(nearest)
        assert found[1] - found[0] == pytest.approx(201.3e6, abs=2e6)
        assert found[2] - found[1] == pytest.approx(251.0e6, abs=2e6)
        assert result.conservation_drift < 1e-10

    def test_comb_125(self, tmp_path):
        """A free-spacing fit finds the 125.5 MHz modulation frequency."""
        result = run_scenario(_load("fig3_left_comb125"), output_root=str(tmp_path))
        comb = result.comb
        assert comb.delta == pytest.approx(125.5e6, rel=0.02)
        assert comb.bandwidth == pytest.approx(0.6e9, abs=0.1e9)
        assert comb.d > comb.d0 > 0
        assert result.echoes == []

    def test_comb_84(self, tmp_path):
        result = run_scenario(_load("fig3_right_comb84"), output_root=str(tmp_path))
        comb = result.comb
        assert comb.delta == pytest.approx(83.7e6, rel=0.02)
        assert comb.bandwidth == pytest.approx(0.6e9, abs=0.1e9)
        assert comb.d0 == pytest.approx(0.2, abs=0.05)
        assert comb.d == pytest.approx(0.77, abs=0.05)
        assert comb.d >= 3 * comb.residual
        assert result.theory.eta > 0

    def test_grid_too_narrow_fails_the_spectrum_stage(self, tmp_path):
        """A failing stage is named and nothing is written."""
        scenario = _with(_load("fig2_single_class"), "grid", freq_half_span_hz=200e6)
        with pytest.raises(StageError) as excinfo:
            run_scenario(scenario, output_root=str(tmp_path))
        assert excinfo.value.stage == "spectrum"
        assert _files(tmp_path) == []


@pytest.mark.integration
@pytest.mark.slow
class TestStorageScenarios:
    """Test echo retrieval from the prepared combs."""

    def test_single_mode_echo(self, tmp_path, test_db):
        scenario = _load("fig4a_comb125")
        result = run_scenario(scenario, output_root=str(tmp_path), db_path=test_db)
        assert result.echo_time == pytest.approx(echo_time(125.5e6), abs=scenario.grid.dt_s)
        assert 0.0465 <= result.efficiency <= 0.186
        assert result.theory is not None

        rows = get_runs_by_hash(result.scenario_hash, db_path=test_db)
        assert len(rows) == 1
        assert rows[0]["status"] == "ok"
        assert rows[0]["efficiency"] == pytest.approx(result.efficiency)
        assert rows[0]["fit_delta_hz"] == pytest.approx(result.comb.delta)

    def test_artifacts(self, tmp_path):
        result = run_scenario(_load("fig4a_comb125"), output_root=str(tmp_path))
        assert set(result.artifacts) == {"spectrum", "trace", "fit", "echo", "summary"}
        for path in result.artifacts.values():
            assert os.path.basename(path).startswith(result.scenario_hash + "_")
        assert not any(os.path.basename(p).startswith(".tmp-") for p in _files(tmp_path))

        trace, meta = read_table(result.artifacts["trace"])
        assert list(trace.columns) == ["time_s", "intensity", "re_field", "im_field", "input_intensity"]
        assert meta["scenario_hash"] == result.scenario_hash

        summary = read_key_values(result.artifacts["summary"])
        assert summary["input.medium.od_scale"] == pytest.approx(48e8)
        assert "version.numpy" in summary
        assert summary["echo0_efficiency"] == pytest.approx(result.efficiency, rel=1e-9)

    def test_repeatable(self, tmp_path):
        """Two runs of one scenario write identical traces."""
        scenario = _load("fig4a_comb125")
        first = run_scenario(scenario, output_root=str(tmp_path / "a"))
        second = run_scenario(scenario, output_root=str(tmp_path / "b"))
        with open(first.artifacts["trace"], "rb") as a, open(second.artifacts["trace"], "rb") as b:
            assert a.read() == b.read()

    def test_two_modes(self, tmp_path):
        """Two modes 6 ns apart are recalled 6 ns apart with equal efficiency."""
        scenario = _load("fig4b_multimode")
        result = run_scenario(scenario, output_root=str(tmp_path))
        assert 0.017 <= result.efficiency <= 0.068
        assert result.efficiency > result.theory.eta > 0.007
        lead = echo_time(83.7e6) - result.echo_time
        assert 0 < lead < 0.3e-9

        first, second = result.modes
        assert result.efficiency == first.report.efficiency
        assert second.report.echo_time - first.report.echo_time == pytest.approx(6e-9, abs=0.05e-9)
        assert second.report.efficiency == pytest.approx(first.report.efficiency, rel=0.05)

        single = _with(scenario, "probe", pulse_times_s=[0.0], pulse_amplitudes=None)
        single = _with(single, "analysis", mode_resolved=False)
        alone = run_scenario(single, write=False)
        assert first.report.efficiency == pytest.approx(alone.efficiency, rel=0.05)

    def test_oracle_stage(self):
        scenario = _with(_load("fig4a_comb125"), "analysis", oracle_atoms=500)
        result = run_scenario(scenario, write=False)
        assert result.oracle_error is not None
        assert np.isfinite(result.oracle_error)


class TestSweep:
    """Test parameter sweeps."""

    def test_analytic_depth_sweep(self, tmp_path):
        """The closed-form optimum over d sits at 2F."""
        scenario = _with(_load("fig3_right_comb84"), "theory", d=0.55, finesse=1.9, d0=0.2)
        df = sweep(scenario, "d", np.linspace(0.1, 8.0, 80), output_root=str(tmp_path))
        assert len(df) == 80
        assert df.loc[df["efficiency"].idxmax(), "value"] == pytest.approx(3.8, abs=0.1)
        assert (df["status"] == "ok").all()
        assert len(_files(tmp_path)) == 1

    def test_analytic_sweep_needs_theory(self, tmp_path):
        with pytest.raises(ScenarioError):
            sweep(_load("fig3_right_comb84"), "finesse", [1.0, 2.0], write=False)

    def test_empty_values(self, tmp_path):
        """An empty value list is rejected before anything runs or is written."""
        with pytest.raises(ScenarioError, match="at least one value"):
            sweep(_load("fig3_left_comb125"), "od_scale", [], output_root=str(tmp_path))
        assert _files(tmp_path) == []

    def test_unknown_parameter(self):
        with pytest.raises(ScenarioError):
            sweep(_load("fig3_left_comb125"), "temperature", [300.0], write=False)

    def test_spacing_rescales_analysis(self):
        scenario = apply_parameter(_load("fig4a_comb125"), "delta_hz", 83.7e6)
        ratio = 83.7e6 / 125.5e6
        assert scenario.pump.modulation_freqs_hz == pytest.approx([83.7e6])
        assert scenario.analysis.comb_spacing_hz == 83.7e6
        assert scenario.analysis.first_tooth_hz == pytest.approx(-376.5e6 * ratio)
        assert scenario.analysis.fit_window_hz == pytest.approx([-440e6 * ratio, 190e6 * ratio])
        assert scenario.echo_window_centres() == pytest.approx([1 / 83.7e6])

    @pytest.mark.integration
    @pytest.mark.slow
    def test_simulated_sweep(self, tmp_path, test_db):
        scenario = _load("fig3_left_comb125")
        df = sweep(scenario, "od_scale", [6e8, 8e8], threads=2, output_root=str(tmp_path), db_path=test_db)
        assert list(df["value"]) == [6e8, 8e8]
        assert (df["status"] == "ok").all()
        assert df["d"].iloc[1] > df["d"].iloc[0]
        table = os.path.join(tmp_path, scenario.name, f"{scenario.scenario_hash}_sweep_od_scale.dat")
        assert os.path.exists(table)
        data, meta = read_table(table)
        assert meta["parameter"] == "od_scale"
        assert len(data) == 2
