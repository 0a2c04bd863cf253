"""
Scenario files: sectioned ``key = value`` text validated into pydantic models.

Every physical quantity carries its unit in the key name. Problems are collected
and reported together as ``<file>:<line>: [section] key: reason``.
"""

import hashlib
import json
import logging
import os
import typing
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from functions.atomic_model import AtomSpecies, caesium, d1_line_table
from functions.afc_theory import TheoryInputs
from functions.errors import ScenarioError
from functions.propagation import MIN_LEAD_S, PulseEnvelope, make_pulse_train
from functions.pump_sim import PumpConfig, VelocityGridSpec
from functions.spectral import CombParams, FrequencyGrid

logger = logging.getLogger(__name__)

HASH_LENGTH = 12


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ScenarioSection(_Section):
    name: str = Field(pattern=r"^[A-Za-z0-9_.-]+$")
    description: str = ""
    seed: int = 0


class SpeciesSection(_Section):
    name: Literal["Cs-133"] = "Cs-133"
    temperature_k: float = Field(default=294.0, gt=0)


class PrepSection(_Section):
    efficiency: float = Field(default=0.99, ge=0.0, le=1.0)


class PumpSection(_Section):
    carrier_detuning_hz: float = 0.0
    modulation_freqs_hz: List[float] = []
    tone_weights: List[float] = [1.0]
    effective_linewidth_hz: float = Field(default=20e6, gt=0)
    pump_rate_per_s: float = Field(default=2.5e6, ge=0)
    duration_s: float = Field(default=1.2e-6, ge=0)
    addressed_line: List[int] = [3, 4]
    direction: Literal["co", "counter"] = "counter"
    modulation_frame: Literal["probe", "pump"] = "probe"

    @field_validator("modulation_freqs_hz")
    @classmethod
    def _positive_freqs(cls, v):
        if any(f <= 0 for f in v):
            raise ValueError("modulation frequencies must be positive")
        return v

    @field_validator("tone_weights")
    @classmethod
    def _non_negative_weights(cls, v):
        if any(w < 0 for w in v):
            raise ValueError("tone weights must be non-negative")
        return v

    @field_validator("addressed_line")
    @classmethod
    def _line_label(cls, v):
        if len(v) != 2:
            raise ValueError("addressed_line takes two integers: ground F and excited F'")
        return v


class MediumSection(_Section):
    od_scale: float = Field(gt=0)
    spectrum_method: Literal["fft", "quadrature"] = "fft"
    dispersion: bool = True
    excited_decay: bool = False
    t1_s: float = Field(default=30.4e-9, gt=0)
    efficiency_reference: Literal["bare", "background"] = "bare"


class ProbeSection(_Section):
    pulse_times_s: List[float] = [0.0]
    pulse_fwhm_s: float = Field(default=2e-9, gt=0)
    pulse_amplitudes: Optional[List[float]] = None
    carrier_detuning_hz: float = -125.5e6

    @field_validator("pulse_times_s")
    @classmethod
    def _at_least_one(cls, v):
        if not v:
            raise ValueError("at least one pulse time is required")
        return v


class GridSection(_Section):
    v_max_m_s: float = Field(default=1200.0, gt=0)
    velocity_points: int = Field(default=2 ** 14, ge=16)
    freq_centre_hz: float = 0.0
    freq_half_span_hz: float = Field(default=1.5e9, gt=0)
    freq_points: int = Field(default=2 ** 15, ge=16)
    dt_s: float = Field(default=10e-12, gt=0)
    span_s: float = Field(default=80e-9, gt=0)
    pad_factor: float = Field(default=1.0, ge=0)


class AnalysisSection(_Section):
    fit: Literal["none", "comb", "peak"] = "none"
    fit_window_hz: Optional[List[float]] = None
    comb_teeth: int = Field(default=5, ge=2)
    comb_spacing_hz: Optional[float] = Field(default=None, gt=0)
    first_tooth_hz: Optional[float] = None
    tooth_width_guess_hz: float = Field(default=40e6, gt=0)
    depth_guess: float = Field(default=0.5, ge=0)
    background_guess: float = Field(default=0.2, ge=0)
    fit_fix_spacing: bool = False
    peak_width_guess_hz: float = Field(default=40e6, gt=0)
    echo_windows_s: Optional[List[float]] = None
    echo_window_width_s: float = Field(default=5e-9, gt=0)
    mode_resolved: bool = False
    oracle_atoms: int = Field(default=0, ge=0)

    @field_validator("fit_window_hz")
    @classmethod
    def _window_pair(cls, v):
        if v is not None and (len(v) != 2 or v[0] >= v[1]):
            raise ValueError("fit_window_hz takes two increasing frequencies")
        return v


class TheorySection(_Section):
    d: Optional[float] = Field(default=None, ge=0)
    finesse: Optional[float] = Field(default=None, gt=0)
    d0: Optional[float] = Field(default=None, ge=0)
    delta_hz: Optional[float] = Field(default=None, gt=0)


class OutputSection(_Section):
    directory: Optional[str] = None
    write_trace: bool = True
    write_spectrum: bool = True


class Scenario(_Section):
    """A validated scenario."""
    scenario: ScenarioSection
    species: SpeciesSection = SpeciesSection()
    prep: PrepSection = PrepSection()
    pump: PumpSection = PumpSection()
    medium: MediumSection
    probe: Optional[ProbeSection] = None
    grid: GridSection = GridSection()
    analysis: AnalysisSection = AnalysisSection()
    theory: TheorySection = TheorySection()
    output: OutputSection = OutputSection()

    @property
    def name(self) -> str:
        return self.scenario.name

    @property
    def scenario_hash(self) -> str:
        return scenario_hash(self)

    def atom_species(self) -> AtomSpecies:
        return caesium(self.species.temperature_k)

    def velocity_grid(self) -> VelocityGridSpec:
        return VelocityGridSpec(self.grid.v_max_m_s, self.grid.velocity_points)

    def frequency_grid(self) -> FrequencyGrid:
        return FrequencyGrid.symmetric(self.grid.freq_centre_hz, self.grid.freq_half_span_hz, self.grid.freq_points)

    def pump_config(self) -> PumpConfig:
        p = self.pump
        return PumpConfig(
            carrier_detuning=p.carrier_detuning_hz,
            modulation_freqs=tuple(p.modulation_freqs_hz),
            tone_weights=tuple(p.tone_weights),
            effective_linewidth=p.effective_linewidth_hz,
            pump_rate=p.pump_rate_per_s,
            duration=p.duration_s,
            addressed_line=tuple(p.addressed_line),
            direction=p.direction,
            modulation_frame=p.modulation_frame,
        )

    def pulse_train(self, amplitudes: Optional[List[float]] = None) -> PulseEnvelope:
        probe = self.probe
        return make_pulse_train(
            probe.pulse_times_s,
            probe.pulse_fwhm_s,
            amplitudes=amplitudes if amplitudes is not None else probe.pulse_amplitudes,
            dt=self.grid.dt_s,
            span=self.grid.span_s,
            carrier_detuning=probe.carrier_detuning_hz,
        )

    def comb_guess(self) -> CombParams:
        a = self.analysis
        return CombParams.build(
            delta=a.comb_spacing_hz,
            gamma=a.tooth_width_guess_hz,
            d=a.depth_guess,
            d0=a.background_guess,
            m_teeth=a.comb_teeth,
            first_tooth=a.first_tooth_hz,
        )

    def echo_window_centres(self) -> List[float]:
        """Explicit echo windows, or one per pulse at pulse time + 1 / comb spacing."""
        if self.analysis.echo_windows_s is not None:
            return list(self.analysis.echo_windows_s)
        if self.probe is None or self.analysis.comb_spacing_hz is None:
            return []
        return [t + 1.0 / self.analysis.comb_spacing_hz for t in self.probe.pulse_times_s]

    def theory_inputs(self) -> Optional[TheoryInputs]:
        t = self.theory
        if t.d is None or t.finesse is None:
            return None
        return TheoryInputs(d=t.d, d0=t.d0 or 0.0, finesse=t.finesse, delta=t.delta_hz or 100e6)


SECTION_MODELS: Dict[str, type] = {
    name: typing.get_args(info.annotation)[0] if typing.get_origin(info.annotation) is typing.Union else info.annotation
    for name, info in Scenario.model_fields.items()
}
REQUIRED_SECTIONS = ("scenario", "medium")


def scenario_hash(scenario: Scenario) -> str:
    """First 12 hex digits of sha256 over the canonical JSON of the validated model."""
    canonical = json.dumps(scenario.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:HASH_LENGTH]


def _is_sequence(annotation) -> bool:
    origin = typing.get_origin(annotation)
    if origin is typing.Union:
        return any(_is_sequence(arg) for arg in typing.get_args(annotation) if arg is not type(None))
    return origin in (list, tuple)


def _split_list(value: str) -> List[str]:
    return [item for item in value.replace(",", " ").split() if item]


def parse_sections(text: str, source: str = "<scenario>") -> Tuple[Dict[str, Dict[str, Tuple[str, int]]], Dict[str, int], List[str]]:
    """
    Split scenario text into sections.

    Returns:
        (sections: {section: {key: (raw value, line)}}, section header lines, diagnostics)
    """
    sections: Dict[str, Dict[str, Tuple[str, int]]] = {}
    headers: Dict[str, int] = {}
    diagnostics: List[str] = []
    current: Optional[str] = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split(" #", 1)[0].strip()
        if not line or line.startswith("#") or line.startswith(";"):
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                diagnostics.append(f"{source}:{lineno}: malformed section header {line!r}")
                current = None
                continue
            current = line[1:-1].strip()
            if current not in SECTION_MODELS:
                diagnostics.append(f"{source}:{lineno}: [{current}] unknown section")
            elif current in headers:
                diagnostics.append(f"{source}:{lineno}: [{current}] section repeated (first at line {headers[current]})")
            else:
                headers[current] = lineno
                sections[current] = {}
            continue
        if "=" not in line:
            diagnostics.append(f"{source}:{lineno}: expected 'key = value', got {line!r}")
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        if current is None:
            diagnostics.append(f"{source}:{lineno}: {key}: key outside any section")
            continue
        if current not in sections:
            continue
        if key in sections[current]:
            diagnostics.append(
                f"{source}:{lineno}: [{current}] {key}: duplicate key (first at line {sections[current][key][1]})"
            )
            continue
        sections[current][key] = (value, lineno)
    return sections, headers, diagnostics


def _validate_section(name: str, entries: Dict[str, Tuple[str, int]], header_line: int, source: str):
    model = SECTION_MODELS[name]
    data = {}
    for key, (value, _) in entries.items():
        info = model.model_fields.get(key)
        data[key] = _split_list(value) if info is not None and _is_sequence(info.annotation) else value
    try:
        return model.model_validate(data), []
    except ValidationError as e:
        diagnostics = []
        for err in e.errors():
            key = str(err["loc"][0]) if err["loc"] else ""
            line = entries[key][1] if key in entries else header_line
            reason = "unknown key" if err["type"] == "extra_forbidden" else err["msg"]
            diagnostics.append(f"{source}:{line}: [{name}] {key}: {reason}")
        return None, diagnostics


def check_references(scenario: Scenario) -> List[Tuple[str, str, str]]:
    """Cross-field checks run after field validation; returns (section, key, reason) triples."""
    problems: List[Tuple[str, str, str]] = []
    pump, analysis, grid = scenario.pump, scenario.analysis, scenario.grid

    expected = 1 + 2 * len(pump.modulation_freqs_hz)
    if len(pump.tone_weights) != expected:
        problems.append(("pump", "tone_weights",
                         f"expected {expected} weights (carrier + 2 per modulation frequency), got {len(pump.tone_weights)}"))
    if not d1_line_table(scenario.atom_species()).has_line(*pump.addressed_line):
        problems.append(("pump", "addressed_line", f"line {pump.addressed_line} is not a D1 transition"))

    f_lo = grid.freq_centre_hz - grid.freq_half_span_hz
    f_hi = grid.freq_centre_hz + grid.freq_half_span_hz
    if analysis.fit != "none":
        if analysis.fit_window_hz is None:
            problems.append(("analysis", "fit_window_hz", f"required for fit = {analysis.fit}"))
        elif analysis.fit_window_hz[0] < f_lo or analysis.fit_window_hz[1] > f_hi:
            problems.append(("analysis", "fit_window_hz", "window lies outside the frequency grid"))
    if analysis.fit == "comb":
        for key in ("comb_spacing_hz", "first_tooth_hz"):
            if getattr(analysis, key) is None:
                problems.append(("analysis", key, "required for fit = comb"))

    probe = scenario.probe
    if probe is not None:
        if not f_lo < probe.carrier_detuning_hz < f_hi:
            problems.append(("probe", "carrier_detuning_hz", "carrier lies outside the frequency grid"))
        if probe.pulse_amplitudes is not None and len(probe.pulse_amplitudes) != len(probe.pulse_times_s):
            problems.append(("probe", "pulse_amplitudes",
                             f"{len(probe.pulse_amplitudes)} amplitudes for {len(probe.pulse_times_s)} pulses"))
        t0 = min(probe.pulse_times_s) - max(MIN_LEAD_S, 5.0 * probe.pulse_fwhm_s)
        t_end = t0 + grid.span_s - grid.dt_s
        if max(probe.pulse_times_s) > t_end:
            problems.append(("probe", "pulse_times_s", "pulse lies beyond the end of the trace"))
        half = 0.5 * analysis.echo_window_width_s
        centres = scenario.echo_window_centres()
        if not centres:
            problems.append(("analysis", "echo_windows_s", "give echo windows or comb_spacing_hz"))
        elif analysis.mode_resolved and len(centres) != len(probe.pulse_times_s):
            problems.append(("analysis", "mode_resolved", "needs one echo window per pulse"))
        for centre in centres:
            if centre - half < t0 or centre + half > t_end:
                problems.append(("analysis", "echo_windows_s", f"window at {centre:.4g} s lies outside the trace"))
    return problems


def load_scenario_text(text: str, source: str = "<scenario>") -> Scenario:
    """Parse and validate scenario text; raises ScenarioError with every diagnostic found."""
    sections, headers, diagnostics = parse_sections(text, source)
    for name in REQUIRED_SECTIONS:
        if name not in sections and not any(f"[{name}]" in d for d in diagnostics):
            diagnostics.append(f"{source}:1: [{name}] required section is missing")

    validated = {}
    for name, entries in sections.items():
        model, problems = _validate_section(name, entries, headers[name], source)
        diagnostics.extend(problems)
        if model is not None:
            validated[name] = model
    if diagnostics:
        raise ScenarioError(f"{source}: scenario is invalid", diagnostics)

    scenario = Scenario(**validated)
    problems = check_references(scenario)
    if problems:
        raise ScenarioError(
            f"{source}: scenario is invalid",
            [f"{source}:{sections.get(sec, {}).get(key, (None, headers.get(sec, 1)))[1]}: [{sec}] {key}: {reason}"
             for sec, key, reason in problems],
        )
    logger.debug("loaded scenario %s (%s) from %s", scenario.name, scenario.scenario_hash, source)
    return scenario


def load_scenario(path: str) -> Scenario:
    """Read and validate a scenario file."""
    if not os.path.exists(path):
        raise ScenarioError(f"scenario file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return load_scenario_text(f.read(), source=path)


def revalidate(data: dict, source: str = "<override>") -> Scenario:
    """Validate a modified ``model_dump()`` of a scenario (used by sweeps and --seed)."""
    try:
        scenario = Scenario.model_validate(data)
    except ValidationError as e:
        raise ScenarioError(
            f"{source}: scenario is invalid",
            [f"{source}: [{'.'.join(str(p) for p in err['loc'])}]: {err['msg']}" for err in e.errors()],
        ) from e
    problems = check_references(scenario)
    if problems:
        raise ScenarioError(f"{source}: scenario is invalid",
                            [f"{source}: [{sec}] {key}: {reason}" for sec, key, reason in problems])
    return scenario
