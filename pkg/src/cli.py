#!/usr/bin/env python3
"""
CLI - Closed-loop anesthesia runs from the command line

Commands:
    run                   one scenario -> trace.csv, metrics.json, config.json
    compare-iterations    one run per iteration count -> compare_iterations.csv, trace_<count>.csv
    suite                 acceptance battery A1-A11 -> suite_report.json

Usage:
    python -m src.cli run --patient data/patients/nominal_patient.json \
        --scenario data/scenarios/induction.json --out output/run
    python -m src.cli run --set controller.mode.count=1000
    python -m src.cli run --config output/run/config.json --out output/rerun
    python -m src.cli compare-iterations --counts 10 50 1000
    python -m src.cli suite --workers 4

Exit codes: 0 ok, 1 acceptance criterion failed, 2 usage, 3 configuration,
4 solver divergence, 5 I/O.
"""

import argparse
import logging
import os
import sys
from dataclasses import replace
from typing import List, Optional, Tuple

from src.errors import (
    EXIT_CRITERIA_FAILED,
    EXIT_OK,
    ConfigurationError,
    RtNmpcError,
    SimulationAborted,
    exit_code_for,
)
from src.models.patient import PatientProfile, load_patient
from src.models.scenario import RunManifest, Scenario, apply_overrides, load_scenario
from src.pipeline.export import (
    config_document,
    load_config_document,
    write_comparison_csv,
    write_json,
    write_metrics_json,
    write_trace_csv,
)
from src.pipeline.metrics import compute_metrics
from src.pipeline.simulator import run_scenario
from src.pipeline.suite import run_suite
from src.solver.projected_gradient import FixedIterations

logger = logging.getLogger(__name__)

DEFAULT_PATIENT = os.path.join("data", "patients", "nominal_patient.json")
DEFAULT_SCENARIO = os.path.join("data", "scenarios", "induction.json")


def configure_logging(verbose: bool = False):
    level = "DEBUG" if verbose else os.environ.get("LOG_LEVEL", "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def banner(title: str):
    print("\n" + "=" * 60)
    print(title)
    print("=" * 60)


def load_inputs(manifest: RunManifest, config_path: Optional[str] = None) -> Tuple[PatientProfile, Scenario, int]:
    """Resolve patient, scenario and seed from files (or a config echo) plus overrides."""
    if config_path:
        profile, scenario, seed = load_config_document(config_path)
        if manifest.overrides:
            scenario = Scenario.from_dict(apply_overrides(scenario.to_dict(), manifest.overrides))
        return profile, scenario, seed if manifest.seed is None else manifest.seed
    profile = load_patient(manifest.patient_path)
    scenario = load_scenario(manifest.scenario_path, manifest.overrides)
    return profile, scenario, 0 if manifest.seed is None else manifest.seed


def _prepare_output(manifest: RunManifest, profile: PatientProfile, scenario: Scenario, seed: int):
    os.makedirs(manifest.output_dir, exist_ok=True)
    write_json(
        config_document(seed, profile, scenario, manifest.overrides,
                        manifest.patient_path, manifest.scenario_path),
        os.path.join(manifest.output_dir, "config.json"),
    )


def _print_metrics(label: str, metrics) -> None:
    data = metrics.to_dict()
    print(f"  {label}: rise={data['rise_time_min']} overshoot={data['overshoot_pct']:.1f}% "
          f"in_band={data['time_in_band_pct']} settling={data['disturbance_settling_min']} "
          f"terminal_error={data['terminal_error']:.3f}")


def cmd_run(manifest: RunManifest, config_path: Optional[str] = None) -> int:
    profile, scenario, seed = load_inputs(manifest, config_path)
    banner(f"RUN: {scenario.name} ({scenario.duration_min:g} min, Ts={scenario.ts_min:g} min)")
    _prepare_output(manifest, profile, scenario, seed)

    try:
        trace = run_scenario(profile, scenario, seed)
    except SimulationAborted as e:
        write_trace_csv(e.partial_trace, os.path.join(manifest.output_dir, "trace.csv"))
        raise
    write_trace_csv(trace, os.path.join(manifest.output_dir, "trace.csv"))

    if len(trace) == 0:
        print("Empty trace (zero duration); no metrics")
        return EXIT_OK
    metrics = compute_metrics(trace, scenario, profile.pd.e0)
    write_metrics_json(metrics, os.path.join(manifest.output_dir, "metrics.json"))
    _print_metrics(scenario.name, metrics)
    print(f"DONE: {len(trace)} rows written to {manifest.output_dir}")
    return EXIT_OK


def cmd_compare_iterations(manifest: RunManifest, counts: List[int],
                           config_path: Optional[str] = None) -> int:
    if not counts:
        raise ConfigurationError("At least one iteration count is required")
    if len(set(counts)) != len(counts):
        raise ConfigurationError(f"Duplicate iteration counts: {counts}")
    profile, scenario, seed = load_inputs(manifest, config_path)
    banner(f"COMPARE ITERATIONS: {scenario.name} with counts {counts}")
    _prepare_output(manifest, profile, scenario, seed)

    traces = []
    summary = {}
    for count in counts:
        variant = scenario.with_controller(replace(scenario.controller, mode=FixedIterations(count)))
        trace = run_scenario(profile, variant, seed)
        write_trace_csv(trace, os.path.join(manifest.output_dir, f"trace_{count}.csv"))
        traces.append((count, trace))
        if len(trace):
            metrics = compute_metrics(trace, variant, profile.pd.e0)
            summary[str(count)] = metrics.to_dict()
            _print_metrics(f"{count:>5} iterations", metrics)

    write_comparison_csv(traces, os.path.join(manifest.output_dir, "compare_iterations.csv"))
    write_json(summary, os.path.join(manifest.output_dir, "metrics_compare.json"))
    print(f"DONE: {len(counts)} runs written to {manifest.output_dir}")
    return EXIT_OK


def cmd_suite(manifest: RunManifest, config_path: Optional[str] = None, workers: int = 1) -> int:
    profile, scenario, seed = load_inputs(manifest, config_path)
    banner("ACCEPTANCE SUITE")
    _prepare_output(manifest, profile, scenario, seed)

    report = run_suite(profile, scenario, seed, workers)
    write_json(report.to_dict(), os.path.join(manifest.output_dir, "suite_report.json"))
    for result in report.results:
        status = "PASS" if result.passed else "FAIL"
        print(f"  [{status}] {result.id:<4} {result.description}: {result.measured}")

    banner(f"SUITE: {len(report.results) - len(report.failed)}/{len(report.results)} criteria passed")
    return EXIT_OK if report.passed else EXIT_CRITERIA_FAILED


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--patient", default=DEFAULT_PATIENT,
        help=f"Patient file (default: {DEFAULT_PATIENT})"
    )
    common.add_argument(
        "--scenario", default=DEFAULT_SCENARIO,
        help=f"Scenario file (default: {DEFAULT_SCENARIO})"
    )
    common.add_argument(
        "--config",
        help="Re-run from a config.json echo (replaces --patient/--scenario)"
    )
    common.add_argument(
        "--out", default=None,
        help="Output directory (default: output/<command>)"
    )
    common.add_argument(
        "--seed", type=int, default=None,
        help="Seed for measurement noise (default: 0, or the config echo's)"
    )
    common.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="Override a scenario key, e.g. controller.mode.count=1000 (repeatable)"
    )
    common.add_argument(
        "--verbose", action="store_true",
        help="Debug logging (overrides LOG_LEVEL)"
    )

    parser = argparse.ArgumentParser(
        description="Real-time projected-gradient NMPC for closed-loop anesthesia"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="Run one scenario")
    compare = sub.add_parser("compare-iterations", parents=[common],
                             help="Compare fixed iteration counts")
    compare.add_argument(
        "--counts", type=int, nargs="+", default=[10, 50, 1000],
        help="Iteration counts (default: 10 50 1000)"
    )
    suite = sub.add_parser("suite", parents=[common], help="Run the acceptance battery")
    suite.add_argument(
        "--workers", type=int, default=1,
        help="Threads for the uncertainty sweep (default: 1)"
    )
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)

    manifest = RunManifest(
        patient_path=args.patient,
        scenario_path=args.scenario,
        output_dir=args.out or os.path.join("output", args.command),
        overrides=list(args.set),
        seed=args.seed,
    )
    try:
        if args.command == "run":
            return cmd_run(manifest, args.config)
        if args.command == "compare-iterations":
            return cmd_compare_iterations(manifest, args.counts, args.config)
        return cmd_suite(manifest, args.config, args.workers)
    except (RtNmpcError, OSError) as e:
        code = exit_code_for(e)
        logger.error("%s", e)
        print(f"ERROR ({code}): {e}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
