"""
Script to run every bundled scenario and print the headline numbers.

This script:
1. Loads each scenario under scenarios/
2. Runs it through the pipeline (artifacts + ledger row)
3. Prints the fitted comb, peak and echo results side by side
4. Sweeps the closed-form efficiency over d for the 125 MHz comb
"""

import argparse
import glob
import os
import sys

# Add src to path for imports
project_root = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
sys.path.insert(0, os.path.join(project_root, 'src'))

# Import after path modification (required for project structure)
from functions.errors import AfcError  # noqa: E402
from functions.pipeline import run_scenario, sweep  # noqa: E402
from functions.scenario import load_scenario, revalidate  # noqa: E402
from utils import settings  # noqa: E402

SCENARIO_DIR = os.path.join(project_root, "scenarios")


def parse_args():
    parser = argparse.ArgumentParser(description="Run the bundled AFC scenarios")
    parser.add_argument("names", nargs="*", help="Scenario file stems (default: all)")
    parser.add_argument("--seed", type=int, default=None, help="Override the scenario seed")
    parser.add_argument("--skip-sweep", action="store_true", help="Skip the analytic d sweep")
    return parser.parse_args()


def describe(result) -> str:
    parts = []
    if result.peak is not None:
        parts.append(f"peak {result.peak.centre / 1e6:.1f} MHz, FWHM {result.peak.width / 1e6:.1f} MHz")
    if result.comb is not None:
        c = result.comb
        parts.append(f"d={c.d:.3f} d0={c.d0:.3f} F={c.finesse:.2f} bandwidth={c.bandwidth / 1e9:.2f} GHz")
    for i, report in enumerate(result.echoes):
        parts.append(f"echo{i} {100 * report.efficiency:.2f}% @ {report.delay * 1e9:.2f} ns")
    for mode in result.modes:
        r = mode.report
        parts.append(f"mode{mode.index} alone {100 * r.efficiency:.2f}% @ {r.delay * 1e9:.3f} ns")
    if result.theory is not None:
        parts.append(f"analytic {100 * result.theory.eta:.2f}%")
    return "; ".join(parts) or "no outputs"


def main():
    """Main function to run the bundled scenarios."""
    args = parse_args()
    settings.setup_logging()

    paths = sorted(glob.glob(os.path.join(SCENARIO_DIR, "*.cfg")))
    if args.names:
        paths = [p for p in paths if os.path.splitext(os.path.basename(p))[0] in args.names]
    if not paths:
        print(f"No scenarios found in {SCENARIO_DIR}")
        return 1

    print("=" * 60)
    print("AFC scenarios")
    print("=" * 60)

    failures = 0
    for path in paths:
        name = os.path.splitext(os.path.basename(path))[0]
        try:
            scenario = load_scenario(path)
            result = run_scenario(scenario, output_root=settings.output_root(), seed=args.seed,
                                  db_path=settings.db_path())
        except AfcError as e:
            failures += 1
            print(f"{name}: FAILED ({e})")
            continue
        print(f"{name} [{result.scenario_hash}]: {describe(result)}")

    if not args.skip_sweep:
        print()
        print("Closed-form efficiency vs d (F = 1.9, d0 = 0.4)")
        data = load_scenario(os.path.join(SCENARIO_DIR, "fig4a_comb125.cfg")).model_dump()
        data["theory"] = {"d": 2.0, "finesse": 1.9, "d0": 0.4, "delta_hz": 125.5e6}
        scenario = revalidate(data, source="fig4a_comb125.cfg")
        values = [0.5 * k for k in range(1, 17)]
        df = sweep(scenario, "d", values, output_root=settings.output_root(), db_path=settings.db_path())
        print(df.to_string(index=False))

    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
