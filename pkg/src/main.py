import os
import sys
import argparse
from typing import List, Optional, Tuple

# Add src to path for imports
src_dir = os.path.abspath(os.path.dirname(__file__))
if src_dir not in sys.path:
    sys.path.insert(0, src_dir)

from functions.afc_theory import TheoryInputs, analytic_efficiency, echo_time, optimal_depth
from functions.errors import AfcError, NoCombError, ScenarioError
from functions.pipeline import SWEEPABLES, run_scenario, sweep
from functions.scenario import load_scenario, revalidate
from functions.spectral import CombParams, fit_comb, load_spectrum
from utils import settings

EXIT_OK = 0
EXIT_SCENARIO = 2
EXIT_FAILURE = 3


def parse_values(text: str) -> List[float]:
    """Comma- or space-separated floats; an empty list is allowed here and rejected by sweep."""
    items = [item for item in text.replace(",", " ").split() if item]
    try:
        return [float(item) for item in items]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"invalid value list {text!r}: {e}")


def parse_window(text: str) -> Tuple[float, float]:
    """Fit window "LO,HI" in Hz; either edge may be negative."""
    values = parse_values(text)
    if len(values) != 2:
        raise argparse.ArgumentTypeError(f"window needs two edges LO,HI, got {text!r}")
    if values[0] == values[1]:
        raise argparse.ArgumentTypeError(f"window edges must differ, got {text!r}")
    return values[0], values[1]


def _join_window(argv: List[str]) -> List[str]:
    # argparse takes "-310e6,310e6" for an option flag; bind it to --window explicitly
    out: List[str] = []
    args = iter(argv)
    for token in args:
        if token == "--window":
            value = next(args, None)
            out.append(token if value is None else f"--window={value}")
        else:
            out.append(token)
    return out


def parse_args(argv: Optional[List[str]] = None):
    parser = argparse.ArgumentParser(
        prog="afc",
        description="Simulate atomic frequency comb storage in warm caesium vapour.",
    )
    parser.add_argument("--seed", type=int, default=None, help="Override the scenario seed")
    parser.add_argument("--threads", type=int, default=None, help="Worker threads for sweeps (default: AFC_THREADS)")
    parser.add_argument("--log-level", default=None, help="Logging level (default: AFC_LOG_LEVEL or INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run a scenario file and write its artifacts")
    run.add_argument("config", help="Scenario file")

    sw = sub.add_parser("sweep", help="Run a scenario over a list of parameter values")
    sw.add_argument("config", help="Scenario file")
    sw.add_argument("--param", required=True, choices=SWEEPABLES, help="Parameter to sweep")
    sw.add_argument("--values", required=True, type=parse_values, help="Comma-separated values")

    th = sub.add_parser("theory", help="Evaluate the closed-form efficiency")
    th.add_argument("--d", type=float, required=True, help="Tooth optical depth")
    th.add_argument("--f", type=float, required=True, help="Finesse")
    th.add_argument("--d0", type=float, default=0.0, help="Background optical depth")
    th.add_argument("--delta", type=float, default=None, help="Comb spacing in Hz (prints the echo time)")

    fit = sub.add_parser("fit", help="Fit a comb to a spectrum table")
    fit.add_argument("spectrum", help="Spectrum file (freq_hz re_d [im_d ...])")
    fit.add_argument("--window", type=parse_window, required=True, metavar="LO_HZ,HI_HZ",
                     help="Fit window in Hz, e.g. --window -310e6,310e6")
    fit.add_argument("--spacing", type=float, required=True, help="Comb spacing guess in Hz")
    fit.add_argument("--teeth", type=int, required=True, help="Number of teeth")
    fit.add_argument("--first-tooth", type=float, default=None, help="First tooth guess in Hz (default: window start + spacing/2)")
    fit.add_argument("--gamma", type=float, default=40e6, help="Tooth FWHM guess in Hz")
    fit.add_argument("--fix-spacing", action="store_true", help="Hold the spacing at --spacing")
    return parser.parse_args(_join_window(sys.argv[1:] if argv is None else list(argv)))


def run_command(args) -> int:
    scenario = load_scenario(args.config)
    result = run_scenario(scenario, output_root=settings.output_root(), seed=args.seed,
                          db_path=settings.db_path())
    print(f"scenario: {scenario.name} ({result.scenario_hash})")
    if result.peak is not None:
        print(f"peak: {result.peak.centre / 1e6:.2f} MHz, FWHM {result.peak.width / 1e6:.2f} MHz")
    if result.comb is not None:
        c = result.comb
        print(f"comb: delta={c.delta / 1e6:.2f} MHz gamma={c.gamma / 1e6:.2f} MHz d={c.d:.3f} "
              f"d0={c.d0:.3f} F={c.finesse:.2f} bandwidth={c.bandwidth / 1e9:.3f} GHz")
    if result.no_comb_d0 is not None:
        print(f"no comb in the fit window (background d0={result.no_comb_d0:.3f})")
    for i, report in enumerate(result.echoes):
        print(f"echo {i}: efficiency {100 * report.efficiency:.3f}% at {report.echo_time * 1e9:.3f} ns "
              f"(delay {report.delay * 1e9:.3f} ns)")
    for mode in result.modes:
        print(f"mode {mode.index}: efficiency {100 * mode.report.efficiency:.3f}%, "
              f"delay {mode.report.delay * 1e9:.3f} ns, crosstalk {mode.crosstalk:.2e}")
    if result.theory is not None:
        print(f"analytic efficiency: {100 * result.theory.eta:.3f}%")
    for kind, path in result.artifacts.items():
        print(f"{kind}: {path}")
    return EXIT_OK


def sweep_command(args) -> int:
    scenario = load_scenario(args.config)
    threads = args.threads if args.threads is not None else settings.default_threads()
    if args.seed is not None:
        data = scenario.model_dump()
        data["scenario"]["seed"] = args.seed
        scenario = revalidate(data, source=args.config)
    df = sweep(scenario, args.param, args.values, threads=threads,
               output_root=settings.output_root(), db_path=settings.db_path())
    print(df.to_string(index=False))
    return EXIT_OK


def theory_command(args) -> int:
    inputs = TheoryInputs(d=args.d, d0=args.d0, finesse=args.f, delta=args.delta or 100e6)
    breakdown = analytic_efficiency(inputs)
    print(f"efficiency: {breakdown.eta:.6g} ({100 * breakdown.eta:.4f}%)")
    print(f"coupling (d/F)^2: {breakdown.coupling:.6g}")
    print(f"reabsorption exp(-d/F): {breakdown.reabsorption:.6g}")
    print(f"dephasing exp(-7/F^2): {breakdown.dephasing:.6g}")
    print(f"background exp(-d0): {breakdown.background:.6g}")
    print(f"optimal depth 2F: {optimal_depth(args.f):.6g}")
    if args.delta is not None:
        print(f"echo time: {echo_time(args.delta) * 1e9:.4f} ns")
    return EXIT_OK


def fit_command(args) -> int:
    spectrum = load_spectrum(args.spectrum)
    lo, hi = args.window
    first = args.first_tooth if args.first_tooth is not None else lo + 0.5 * args.spacing
    guess = CombParams.build(args.spacing, args.gamma, 0.5, 0.1, args.teeth, first_tooth=first)
    try:
        comb = fit_comb(spectrum, (lo, hi), guess, fix_delta=args.fix_spacing)
    except NoCombError as e:
        print(f"no comb: background d0={e.d0:.4f}")
        return EXIT_FAILURE
    for key, value in comb.as_dict().items():
        print(f"{key}: {value:.6g}")
    return EXIT_OK


COMMANDS = {
    "run": run_command,
    "sweep": sweep_command,
    "theory": theory_command,
    "fit": fit_command,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    settings.setup_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except ScenarioError as e:
        print(str(e), file=sys.stderr)
        return EXIT_SCENARIO
    except AfcError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
