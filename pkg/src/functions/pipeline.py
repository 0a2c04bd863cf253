"""
Scenario orchestration: pump -> spectrum -> fit -> propagate -> echo analysis -> artifacts.

Each stage runs inside :func:`stage`, which turns any AfcError into a StageError
naming the stage. Artifacts are only written after every stage succeeded.
"""

import logging
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import pydantic
import scipy

from functions import run_db
from functions.afc_theory import EfficiencyBreakdown, TheoryInputs, analytic_efficiency, echo_time
from functions.atomic_model import d1_line_table, d2_line_table
from functions.errors import AfcError, DomainError, NoCombError, ScenarioError, StageError
from functions.propagation import (
    EchoReport,
    PulseEnvelope,
    dipole_sum_echo,
    echo_efficiency,
    excited_decay_factor,
    propagate,
    pulse_spectrum,
    sample_ensemble,
    window_energy,
)
from functions.pump_sim import VelocityDistribution, apply_prep_pump, apply_vsp, thermal_populations
from functions.scenario import Scenario, revalidate
from functions.spectral import (
    CombParams,
    ComplexSpectrum,
    PeakFit,
    complex_depth_spectrum,
    find_peaks_hz,
    fit_comb,
    fit_peak,
    save_spectrum,
)
from utils.tables import write_key_values, write_table

logger = logging.getLogger(__name__)

# sweep parameter -> what it changes
SIMULATED_SWEEPABLES = ("delta_hz", "pump_duration_s", "od_scale", "effective_linewidth_hz")
ANALYTIC_SWEEPABLES = ("d", "finesse", "d0")
SWEEPABLES = SIMULATED_SWEEPABLES + ANALYTIC_SWEEPABLES
MAX_CONSERVATION_DRIFT = 1e-10


@dataclass
class ModeReport:
    """One temporal mode propagated on its own."""
    index: int
    report: EchoReport
    crosstalk: float


@dataclass
class RunResult:
    scenario: Scenario
    scenario_hash: str
    distribution: VelocityDistribution
    spectrum: ComplexSpectrum
    comb: Optional[CombParams] = None
    no_comb_d0: Optional[float] = None
    peak: Optional[PeakFit] = None
    peaks_hz: List[float] = field(default_factory=list)
    pulse: Optional[PulseEnvelope] = None
    trace: Optional[PulseEnvelope] = None
    reference: Optional[PulseEnvelope] = None
    echoes: List[EchoReport] = field(default_factory=list)
    modes: List[ModeReport] = field(default_factory=list)
    theory: Optional[EfficiencyBreakdown] = None
    oracle_error: Optional[float] = None
    conservation_drift: float = 0.0
    timings: Dict[str, float] = field(default_factory=dict)
    artifacts: Dict[str, str] = field(default_factory=dict)

    @property
    def primary_echo(self) -> Optional[EchoReport]:
        """First mode propagated alone when modes are resolved, else the first window of the full trace."""
        if self.modes:
            return self.modes[0].report
        return self.echoes[0] if self.echoes else None

    @property
    def efficiency(self) -> Optional[float]:
        report = self.primary_echo
        return report.efficiency if report else None

    @property
    def echo_time(self) -> Optional[float]:
        report = self.primary_echo
        return report.delay if report else None


@contextmanager
def stage(name: str, timings: Dict[str, float]):
    """Time a pipeline stage and name it in any AfcError it raises."""
    start = time.perf_counter()
    logger.info("stage %s", name)
    try:
        yield
    except StageError:
        raise
    except AfcError as e:
        raise StageError(name, e) from e
    finally:
        timings[name] = time.perf_counter() - start


def prepare_distribution(scenario: Scenario) -> VelocityDistribution:
    """Thermal populations after the prep and velocity-selective pump stages."""
    species = scenario.atom_species()
    dist = thermal_populations(species, scenario.velocity_grid())
    dist = apply_prep_pump(dist, scenario.prep.efficiency)
    return apply_vsp(dist, scenario.pump_config(), d1_line_table(species))


def _reference_pulse(scenario: Scenario, pulse: PulseEnvelope, spectrum: ComplexSpectrum,
                     comb: Optional[CombParams], no_comb_d0: Optional[float]) -> PulseEnvelope:
    if scenario.medium.efficiency_reference == "bare":
        return pulse
    d0 = comb.d0 if comb is not None else no_comb_d0
    if d0 is None:
        raise DomainError("a background reference needs a comb fit (or a no-comb background estimate)")
    flat = ComplexSpectrum(spectrum.grid, np.full(spectrum.grid.count, d0, dtype=complex))
    return propagate(pulse, flat, pad_factor=scenario.grid.pad_factor, dispersion=False)


def _propagate(scenario: Scenario, pulse: PulseEnvelope, spectrum: ComplexSpectrum) -> PulseEnvelope:
    medium = scenario.medium
    return propagate(
        pulse,
        spectrum,
        pad_factor=scenario.grid.pad_factor,
        dispersion=medium.dispersion,
        decay_t1=medium.t1_s if medium.excited_decay else None,
    )


def _mode_reports(scenario: Scenario, spectrum: ComplexSpectrum, comb: Optional[CombParams],
                  no_comb_d0: Optional[float], centres: Sequence[float]) -> List[ModeReport]:
    probe = scenario.probe
    n_modes = len(probe.pulse_times_s)
    base = probe.pulse_amplitudes or [1.0] * n_modes
    width = scenario.analysis.echo_window_width_s
    solo_pulses = [scenario.pulse_train([base[j] if j == k else 0.0 for j in range(n_modes)])
                   for k in range(n_modes)]
    solo_traces = [_propagate(scenario, pulse, spectrum) for pulse in solo_pulses]

    reports = []
    for k, (pulse, trace) in enumerate(zip(solo_pulses, solo_traces)):
        reference = _reference_pulse(scenario, pulse, spectrum, comb, no_comb_d0)
        report = echo_efficiency(trace, reference, centres[k], width)
        others = sum(window_energy(solo_traces[j], centres[k], width) for j in range(n_modes) if j != k)
        crosstalk = others / reference.energy
        reports.append(ModeReport(k, report, crosstalk))
        logger.info("mode %d: efficiency %.4f%%, echo delay %.3f ns, crosstalk %.2e",
                    k, 100 * report.efficiency, report.delay * 1e9, crosstalk)
    return reports


def _oracle_error(scenario: Scenario, pulse: PulseEnvelope, trace: PulseEnvelope,
                  spectrum: ComplexSpectrum, seed: int) -> float:
    """Relative L2 distance between the radiated intensity and the dipole-sum oracle after the pulse."""
    carrier = pulse.carrier_detuning
    filt = pulse_spectrum(pulse, spectrum.freqs - carrier)
    rng = np.random.default_rng(seed)
    sample = sample_ensemble(spectrum, scenario.analysis.oracle_atoms, spectral_filter=filt,
                             rng=rng, reference=carrier)
    t_peak = pulse.times[int(np.argmax(pulse.intensity))]
    mask = pulse.times > t_peak + 2.0 * scenario.probe.pulse_fwhm_s
    radiated = np.abs(trace.samples[mask] - pulse.samples[mask]) ** 2
    oracle = dipole_sum_echo(sample, pulse.times[mask] - t_peak)
    if radiated.max() <= 0 or oracle.max() <= 0:
        return float("nan")
    radiated, oracle = radiated / radiated.max(), oracle / oracle.max()
    return float(np.linalg.norm(radiated - oracle) / np.linalg.norm(oracle))


def run_scenario(
    scenario: Scenario,
    output_root: Optional[str] = None,
    seed: Optional[int] = None,
    db_path: Optional[str] = None,
    write: bool = True,
    command: str = "run",
) -> RunResult:
    """
    Run every stage of a scenario.

    Args:
        scenario: Validated scenario
        output_root: Artifact root; the run writes into ``<root>/<directory or name>``
        seed: Overrides ``[scenario] seed`` (used by the dipole-sum oracle)
        db_path: Run ledger; None skips the ledger
        write: Write artifacts
        command: Name recorded in the ledger

    Returns:
        RunResult

    Raises:
        StageError: a stage failed; nothing has been written
    """
    if seed is not None and seed != scenario.scenario.seed:
        data = scenario.model_dump()
        data["scenario"]["seed"] = seed
        scenario = revalidate(data, source=scenario.name)
    digest = scenario.scenario_hash
    timings: Dict[str, float] = {}
    started = time.perf_counter()
    logger.info("running scenario %s (%s)", scenario.name, digest)

    with stage("pump", timings):
        dist = prepare_distribution(scenario)
        drift = abs(dist.population_sum() - dist.total_population)
        if drift > MAX_CONSERVATION_DRIFT:
            raise DomainError(f"population drifted by {drift:.3e} during pumping")

    with stage("spectrum", timings):
        spectrum = complex_depth_spectrum(
            dist,
            d2_line_table(scenario.atom_species()),
            scenario.frequency_grid(),
            od_scale=scenario.medium.od_scale,
            method=scenario.medium.spectrum_method,
        )
    result = RunResult(scenario, digest, dist, spectrum, conservation_drift=drift, timings=timings)
    result.peaks_hz = [float(f) for f in find_peaks_hz(spectrum)]

    analysis = scenario.analysis
    with stage("fit", timings):
        if analysis.fit == "comb":
            try:
                result.comb = fit_comb(spectrum, tuple(analysis.fit_window_hz), scenario.comb_guess(),
                                       fix_delta=analysis.fit_fix_spacing)
            except NoCombError as e:
                logger.warning("%s", e)
                result.no_comb_d0 = e.d0
        elif analysis.fit == "peak":
            result.peak = fit_peak(spectrum, tuple(analysis.fit_window_hz), analysis.peak_width_guess_hz)
            logger.info("peak at %.2f MHz, FWHM %.2f MHz", result.peak.centre / 1e6, result.peak.width / 1e6)

    if scenario.probe is not None:
        with stage("propagate", timings):
            result.pulse = scenario.pulse_train()
            result.trace = _propagate(scenario, result.pulse, spectrum)
            result.reference = _reference_pulse(scenario, result.pulse, spectrum, result.comb, result.no_comb_d0)

        with stage("echo", timings):
            centres = scenario.echo_window_centres()
            width = analysis.echo_window_width_s
            result.echoes = [echo_efficiency(result.trace, result.reference, c, width) for c in centres]
            for report in result.echoes:
                logger.info("echo window %.2f ns: efficiency %.4f%%, peak %.3f ns",
                            report.window[0] * 1e9, 100 * report.efficiency, report.echo_time * 1e9)
            if analysis.mode_resolved and len(scenario.probe.pulse_times_s) > 1:
                result.modes = _mode_reports(scenario, spectrum, result.comb, result.no_comb_d0, centres)

        if analysis.oracle_atoms > 0:
            with stage("oracle", timings):
                result.oracle_error = _oracle_error(scenario, result.pulse, result.trace, spectrum,
                                                    scenario.scenario.seed)

    with stage("theory", timings):
        if result.comb is not None:
            result.theory = analytic_efficiency(
                TheoryInputs(result.comb.d, result.comb.d0, result.comb.finesse, result.comb.delta)
            )

    timings["total"] = time.perf_counter() - started
    if write:
        with stage("write", timings):
            result.artifacts = write_artifacts(result, output_root or "output")
    if db_path is not None:
        run_db.insert_run(
            scenario_name=scenario.name,
            scenario_hash=digest,
            command=command,
            status="ok",
            efficiency=result.efficiency,
            echo_time_s=result.echo_time,
            fit=result.comb.as_dict() if result.comb else None,
            runtime_s=timings["total"],
            output_dir=os.path.dirname(next(iter(result.artifacts.values()), "")),
            summary=_report_values(result),
            db_path=db_path,
        )
    return result


def _report_values(result: RunResult) -> Dict[str, object]:
    values: Dict[str, object] = {
        "scenario": result.scenario.name,
        "scenario_hash": result.scenario_hash,
        "conservation_drift": result.conservation_drift,
        "f4_population": result.distribution.f4_population(),
        "spectrum_peaks_hz": result.peaks_hz,
    }
    if result.comb is not None:
        values.update({f"fit_{k}": v for k, v in result.comb.as_dict().items()})
    if result.no_comb_d0 is not None:
        values["no_comb_d0"] = result.no_comb_d0
    if result.peak is not None:
        values.update({f"fit_{k}": v for k, v in result.peak.as_dict().items()})
    for i, report in enumerate(result.echoes):
        values.update({f"echo{i}_{k}": v for k, v in report.as_dict().items()})
        values[f"echo{i}_t1_factor"] = excited_decay_factor(report.delay, result.scenario.medium.t1_s)
    for mode in result.modes:
        values.update({f"mode{mode.index}_{k}": v for k, v in mode.report.as_dict().items()})
        values[f"mode{mode.index}_crosstalk"] = mode.crosstalk
    if result.theory is not None:
        values.update({f"theory_{k}": v for k, v in result.theory.as_dict().items()})
        values["theory_echo_time_s"] = echo_time(result.comb.delta)
        if result.efficiency is not None and result.theory.eta > 0:
            values["enhancement"] = result.efficiency / result.theory.eta
    if result.oracle_error is not None:
        values["oracle_relative_l2"] = result.oracle_error
    return values


def _flatten(prefix: str, data: dict) -> Dict[str, object]:
    out: Dict[str, object] = {}
    for key, value in data.items():
        name = f"{prefix}.{key}" if prefix else key
        if isinstance(value, dict):
            out.update(_flatten(name, value))
        else:
            out[name] = "none" if value is None else value
    return out


def write_artifacts(result: RunResult, output_root: str) -> Dict[str, str]:
    """Write spectrum, trace, fit, echo and summary files named ``<hash>_<kind>``."""
    scenario = result.scenario
    directory = os.path.join(output_root, scenario.output.directory or scenario.name)
    prefix = os.path.join(directory, f"{result.scenario_hash}_")
    header = {"scenario": scenario.name, "scenario_hash": result.scenario_hash}
    paths: Dict[str, str] = {}

    if scenario.output.write_spectrum:
        paths["spectrum"] = save_spectrum(prefix + "spectrum.dat", result.spectrum, header)
    if result.trace is not None and scenario.output.write_trace:
        trace = result.trace
        df = pd.DataFrame({
            "time_s": trace.times,
            "intensity": trace.intensity,
            "re_field": trace.samples.real,
            "im_field": trace.samples.imag,
            "input_intensity": result.pulse.intensity,
        })
        paths["trace"] = write_table(prefix + "trace.dat", df, header)

    report = _report_values(result)
    fit_keys = {k: v for k, v in report.items() if k.startswith(("fit_", "no_comb", "theory_", "spectrum_"))}
    paths["fit"] = write_key_values(prefix + "fit.txt", {**header, **fit_keys})
    if result.echoes:
        echo_keys = {k: v for k, v in report.items() if k.startswith(("echo", "mode", "enhancement", "oracle"))}
        paths["echo"] = write_key_values(prefix + "echo.txt", {**header, **echo_keys})

    summary = {**header, **_flatten("input", scenario.model_dump()), **report}
    summary.update({
        "version.python": platform.python_version(),
        "version.numpy": np.__version__,
        "version.scipy": scipy.__version__,
        "version.pandas": pd.__version__,
        "version.pydantic": pydantic.VERSION,
    })
    summary.update({f"timing.{k}_s": v for k, v in result.timings.items()})
    paths["summary"] = write_key_values(prefix + "summary.txt", summary)
    logger.info("wrote %d artifacts to %s", len(paths), directory)
    return paths


def apply_parameter(scenario: Scenario, parameter: str, value: float) -> Scenario:
    """
    Copy of ``scenario`` with one sweepable changed.

    ``delta_hz`` rescales every modulation frequency (keeping their ratios), the
    fitted spacing, and the frequencies of the first tooth and fit window about
    zero; echo windows follow the spacing unless given explicitly.
    """
    data = scenario.model_dump()
    if parameter == "delta_hz":
        old = scenario.analysis.comb_spacing_hz or (scenario.pump.modulation_freqs_hz or [None])[0]
        if not old:
            raise ScenarioError(f"{scenario.name}: delta_hz sweep needs comb_spacing_hz or a modulation frequency")
        ratio = value / old
        data["pump"]["modulation_freqs_hz"] = [f * ratio for f in scenario.pump.modulation_freqs_hz]
        analysis = data["analysis"]
        analysis["comb_spacing_hz"] = value
        if analysis["first_tooth_hz"] is not None:
            analysis["first_tooth_hz"] *= ratio
        if analysis["fit_window_hz"] is not None:
            analysis["fit_window_hz"] = [f * ratio for f in analysis["fit_window_hz"]]
        data["theory"]["delta_hz"] = value
    elif parameter == "pump_duration_s":
        data["pump"]["duration_s"] = value
    elif parameter == "od_scale":
        data["medium"]["od_scale"] = value
    elif parameter == "effective_linewidth_hz":
        data["pump"]["effective_linewidth_hz"] = value
    elif parameter in ANALYTIC_SWEEPABLES:
        data["theory"][parameter] = value
    else:
        raise ScenarioError(f"unknown sweep parameter {parameter!r}; choose from {', '.join(SWEEPABLES)}")
    return revalidate(data, source=f"{scenario.name}[{parameter}={value:g}]")


def _analytic_row(scenario: Scenario, parameter: str, value: float) -> Dict[str, object]:
    inputs = scenario.theory_inputs()
    if inputs is None:
        raise ScenarioError(f"{scenario.name}: [theory] needs d and finesse for an analytic sweep")
    breakdown = analytic_efficiency(inputs)
    return {
        "value": value,
        "status": "ok",
        "efficiency": breakdown.eta,
        "echo_time_s": echo_time(inputs.delta),
        "d": inputs.d,
        "d0": inputs.d0,
        "finesse": inputs.finesse,
        "delta_hz": inputs.delta,
    }


def _simulated_row(scenario: Scenario, value: float, db_path: Optional[str], parameter: str) -> Dict[str, object]:
    row: Dict[str, object] = {"value": value, "status": "ok", "efficiency": np.nan, "echo_time_s": np.nan}
    row.update({k: np.nan for k in ("delta_hz", "gamma_hz", "d", "d0", "m_teeth", "bandwidth_hz", "finesse")})
    try:
        result = run_scenario(scenario, write=False)
    except StageError as e:
        logger.warning("%s=%g: %s", parameter, value, e)
        row["status"] = f"failed:{e.stage}"
        return row
    if result.efficiency is not None:
        row["efficiency"] = result.efficiency
        row["echo_time_s"] = result.echo_time
    if result.comb is not None:
        row.update({k: v for k, v in result.comb.as_dict().items() if k in row})
    if db_path is not None:
        run_db.insert_run(
            scenario_name=scenario.name,
            scenario_hash=result.scenario_hash,
            command="sweep",
            status="ok",
            sweep_parameter=parameter,
            sweep_value=value,
            efficiency=result.efficiency,
            echo_time_s=result.echo_time,
            fit=result.comb.as_dict() if result.comb else None,
            runtime_s=result.timings.get("total"),
            db_path=db_path,
        )
    return row


def sweep(
    scenario: Scenario,
    parameter: str,
    values: Sequence[float],
    threads: int = 1,
    output_root: Optional[str] = None,
    db_path: Optional[str] = None,
    write: bool = True,
) -> pd.DataFrame:
    """
    Run a scenario once per parameter value.

    Args:
        scenario: Base scenario
        parameter: One of SWEEPABLES
        values: Parameter values (non-empty)
        threads: Worker threads
        output_root: Artifact root for the sweep table
        db_path: Run ledger; None skips the ledger
        write: Write the sweep table

    Returns:
        DataFrame with one row per value: value, status, efficiency, echo time and
        the fitted comb (or the analytic inputs)
    """
    if parameter not in SWEEPABLES:
        raise ScenarioError(f"unknown sweep parameter {parameter!r}; choose from {', '.join(SWEEPABLES)}")
    values = [float(v) for v in values]
    if not values:
        raise ScenarioError("sweep needs at least one value")
    variants = [apply_parameter(scenario, parameter, v) for v in values]

    if parameter in ANALYTIC_SWEEPABLES:
        rows = [_analytic_row(s, parameter, v) for s, v in zip(variants, values)]
    else:
        with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
            rows = list(pool.map(lambda sv: _simulated_row(sv[0], sv[1], db_path, parameter), zip(variants, values)))

    df = pd.DataFrame(rows)
    df.insert(0, "parameter", parameter)
    if write:
        digest = scenario.scenario_hash
        directory = os.path.join(output_root or "output", scenario.output.directory or scenario.name)
        path = os.path.join(directory, f"{digest}_sweep_{parameter}.dat")
        write_table(path, df.drop(columns=["parameter"]), {
            "scenario": scenario.name, "scenario_hash": digest, "parameter": parameter,
        })
        logger.info("wrote sweep table %s", path)
    return df
