#!/usr/bin/env python3
"""Run decoupling experiments from a JSON experiment config.

Subcommands:
- simulate: one experiment end-to-end (echo_train.csv + metadata.json)
- scan: every point of the config's scan grid (scan_table.csv + scan.json)
- aht: average-Hamiltonian decoupling report (aht_report.csv, aht_scaling.csv, aht.json)
- analyze: re-run the echo analysis on an existing echo_train.csv (fit.json)

Data goes to files under --out (default: the config's output_dir); stdout
gets a JSON summary; logs go to stderr.

Exit codes: 0 success, 2 invalid config or inputs, 3 numerical or analysis failure.
"""

import argparse
import json
import logging
import math
import sys
from pathlib import Path

# Add parent to path for lib imports
sys.path.insert(0, str(Path(__file__).parent.parent))
from lib import reports
from lib.aht import cycle_error_scaling, verify_decoupling
from lib.analysis import run_scan
from lib.config import ConfigError, load_experiment_config, load_global_config
from lib.errors import (
    AnalysisError,
    DomainError,
    NumericalError,
    ResourceError,
    SpinSimError,
    TimingError,
)
from lib.experiment import analyze_train, build_sequence, realize_system, run_point, simulate, write_run
from lib.log import configure_logging
from lib.sequences import BUILDERS, validate_timing
from lib.spinops import system_hamiltonian

logger = logging.getLogger("lib.cli")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

SCAN_COLUMNS = [
    "index", "value", "success", "cycle_time_s", "abundance", "t2_s", "t2_err_s",
    "converged", "n_echoes", "n_failed_realizations", "error",
]
AHT_COLUMNS = [
    "order", "success", "offset_norm", "dipolar_norm", "cross_norm", "total_norm",
    "reference_dipolar_norm", "dipolar_decoupled", "error",
]
SCALING_COLUMNS = ["hamiltonian", "reference_order", "cycle_time_s", "error"]

# tau multipliers for the cycle-error family when the config has no cycle_time grid
DEFAULT_SCALING_FACTORS = (0.1, 0.2, 0.4, 0.7, 1.0)


def exit_code_for(error: Exception) -> int:
    if isinstance(error, (ConfigError, TimingError, DomainError, ResourceError)):
        return EXIT_CONFIG
    return EXIT_NUMERICAL


def _load(args):
    try:
        global_config = load_global_config()
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read global config: {e}", "config.json") from e
    config = load_experiment_config(args.config, global_config)
    config = config.with_overrides(seed=args.seed_override)
    out_dir = Path(args.out) if args.out else Path(config.output_dir)
    workers = args.workers or global_config.get("execution", {}).get("workers", 1)
    return config, out_dir, workers, global_config


def cmd_simulate(args) -> dict:
    config, out_dir, workers, _ = _load(args)
    timing = validate_timing(build_sequence(config))
    if not timing.success:
        raise TimingError("; ".join(timing.errors))
    for warning in timing.warnings:
        logger.warning("%s", warning)

    result = simulate(config, workers=workers)
    fitted, fit_error = None, None
    try:
        fitted = analyze_train(result.mean, config)
    except AnalysisError as e:
        fit_error = str(e)
        logger.warning("Analysis failed: %s", e)
    write_run(out_dir, config, result, fitted)

    return {
        "success": True,
        "command": "simulate",
        "output_dir": str(out_dir),
        "config_hash": config.config_hash(),
        "n_samples": len(result.mean),
        "n_failed_realizations": result.n_failed,
        "timing_warnings": list(timing.warnings),
        "fit": None if fitted is None else fitted["fit"].to_dict(),
        "fit_error": fit_error,
    }


def cmd_scan(args) -> dict:
    config, out_dir, workers, _ = _load(args)
    if config.scan is None:
        raise ConfigError("required for the scan command", "scan")

    table = run_scan(config.scan.axis, config.scan.grid, config, runner=run_point, out_dir=out_dir, workers=workers)
    digest = config.config_hash()
    reports.write_rows_csv(out_dir / "scan_table.csv", table.rows, SCAN_COLUMNS, digest)
    reports.write_json(out_dir / "scan.json", {
        "axis": table.axis.value,
        "grid": list(config.scan.grid),
        "summary": table.summary,
        "config": config.to_dict(),
    }, digest)
    if not table.successful:
        raise NumericalError("every scan point failed")
    return {
        "success": True,
        "command": "scan",
        "output_dir": str(out_dir),
        "config_hash": digest,
        "axis": table.axis.value,
        "n_points": len(table.rows),
        "summary": table.summary,
    }


def cmd_aht(args) -> dict:
    config, out_dir, _, global_config = _load(args)
    seq = build_sequence(config)
    sys_ = realize_system(config, config.seed, global_config)
    hamiltonians = {
        "full": system_hamiltonian(sys_, config.max_spins_cap),
        "dipolar": system_hamiltonian(sys_.scaled(offset_scale=0.0), config.max_spins_cap),
    }

    rows = [verify_decoupling(seq, sys_, order) for order in (0, 1)]

    section = config.sequence
    if config.scan is not None and config.scan.axis == "cycle_time":
        taus = [value * 1e-6 for value in config.scan.grid]
    else:
        taus = [section.tau_us * 1e-6 * f for f in DEFAULT_SCALING_FACTORS]
    kwargs = {"helicity": section.helicity} if section.builder == "mrev8" else {}
    family = lambda tau: BUILDERS[section.builder](tau, 0.0, **kwargs)

    scaling_rows, slopes = [], {}
    # Full Hamiltonian at both truncations, plus the couplings alone at order 0
    for name, reference_order in (("full", 0), ("full", 1), ("dipolar", 0)):
        key = f"order_{reference_order}" if name == "full" else f"{name}_order_{reference_order}"
        try:
            report = cycle_error_scaling(family, taus, hamiltonians[name], reference_order=reference_order)
        except SpinSimError as e:
            slopes[key] = {"success": False, "error": str(e)}
            continue
        slopes[key] = {
            "success": True,
            "slope": None if math.isnan(report.slope) else report.slope,
            "slope_stderr": None if math.isnan(report.slope_stderr) else report.slope_stderr,
            "exact": report.exact,
        }
        scaling_rows += [{"hamiltonian": name, "reference_order": reference_order, **row} for row in report.rows()]

    digest = config.config_hash()
    reports.write_rows_csv(out_dir / "aht_report.csv", rows, AHT_COLUMNS, digest)
    reports.write_rows_csv(out_dir / "aht_scaling.csv", scaling_rows, SCALING_COLUMNS, digest)
    reports.write_json(out_dir / "aht.json", {
        "decoupling": rows,
        "scaling": slopes,
        "system": sys_.to_dict(),
        "config": config.to_dict(),
    }, digest)
    return {
        "success": all(row["success"] for row in rows),
        "command": "aht",
        "output_dir": str(out_dir),
        "config_hash": digest,
        "decoupling": rows,
        "scaling": slopes,
    }


def cmd_analyze(args) -> dict:
    config, out_dir, _, _ = _load(args)
    train_path = Path(args.train) if args.train else out_dir / "echo_train.csv"
    if not train_path.exists():
        raise ConfigError(f"echo train not found: {train_path}", "--train")
    train = reports.read_train_csv(train_path)
    fitted = analyze_train(train, config)
    digest = config.config_hash()
    reports.write_json(out_dir / "fit.json", {
        "source": str(train_path),
        "fit": fitted["fit"].to_dict(),
        "amplitudes": {"times_s": fitted["times"], "values": fitted["amplitudes"], "kept": fitted["kept"]},
    }, digest)
    return {
        "success": True,
        "command": "analyze",
        "output_dir": str(out_dir),
        "config_hash": digest,
        "fit": fitted["fit"].to_dict(),
    }


COMMANDS = {
    "simulate": cmd_simulate,
    "scan": cmd_scan,
    "aht": cmd_aht,
    "analyze": cmd_analyze,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Multiple-pulse decoupling experiments on 29Si spin clusters")
    parser.add_argument("command", choices=sorted(COMMANDS), help="What to run")
    parser.add_argument("--config", required=True, type=Path, help="Path to experiment config JSON")
    parser.add_argument("--out", type=Path, help="Output directory (default: config output_dir)")
    parser.add_argument("--workers", type=int, help="Parallel realizations (default: config.json execution.workers)")
    parser.add_argument("--seed-override", type=int, help="Replace the config's base seed")
    parser.add_argument("--train", type=Path, help="analyze: echo_train.csv to re-analyze")
    parser.add_argument("--verbose", action="store_true", help="Log progress to stderr")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)

    try:
        result = COMMANDS[args.command](args)
    except SpinSimError as e:
        code = exit_code_for(e)
        result = {
            "success": False,
            "command": args.command,
            "error": str(e),
            "error_type": type(e).__name__,
            "key_path": getattr(e, "key_path", None),
        }
        print(json.dumps(result, indent=2))
        return code

    print(json.dumps(reports.jsonable(result), indent=2))
    return EXIT_OK if result["success"] else EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
