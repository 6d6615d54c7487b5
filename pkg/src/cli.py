"""
Command line interface for the free-boundary laboratory
"""

import argparse
import logging
import sys
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path
from typing import Dict, List, Optional

from .config import LabConfig, RunConfig
from .errors import (ArtifactNotFoundError, ConfigError, FreeBoundaryLabError, SchemaError,
                     SolverError, StructuralError)
from .freeboundary import attach_gradients, extract_free_boundary
from .solver import FreeBoundarySolver
from .utils import CheckpointManager, DataExporter
from .verification import build_report

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_SOLVER = 1
EXIT_VERIFICATION = 2
EXIT_USAGE = 64
EXIT_SCHEMA = 65
EXIT_IO = 66

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'
LOG_FILE = "freeboundary.log"

SUMMARY_COLUMNS = ["axis", "value", "status", "exit_code", "first_failure", "level", "sharp_level",
                   "residual", "fb_median_abs", "passed", "config_hash", "output_dir"]


def setup_logging(log_level: str = "INFO"):
    """Setup logging configuration"""
    logging.basicConfig(
        level=getattr(logging, log_level),
        format=LOG_FORMAT,
        handlers=[logging.StreamHandler()],
        force=True,
    )


def attach_log_file(out_dir: Path) -> logging.Handler:
    """Mirror the log into the output directory once the config has been validated"""
    out_dir.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out_dir / LOG_FILE)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logging.getLogger().addHandler(handler)
    return handler


def parse_args(argv: Optional[List[str]] = None):
    """Parse command line arguments"""
    common = argparse.ArgumentParser(add_help=False)
    source = common.add_mutually_exclusive_group()
    source.add_argument('--config', type=str, help='Path to a dotted key-value config file')
    source.add_argument('--preset', choices=sorted(LabConfig.PRESETS), help='Start from a shipped preset')
    common.add_argument('--out', type=str, help='Output directory (overrides output.dir)')
    common.add_argument('--seed', type=int, help='Seed for verification subsampling (overrides run.seed)')
    common.add_argument('--threads', type=int, default=LabConfig.DEFAULT_THREADS,
                        help=f'Worker threads (default: {LabConfig.DEFAULT_THREADS})')
    common.add_argument('--log-level', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
                        default='INFO', help='Logging level (default: INFO)')

    parser = argparse.ArgumentParser(description='Free-boundary laboratory: mountain pass, continuation, verification')
    commands = parser.add_subparsers(dest='command', required=True)
    commands.add_parser('solve', parents=[common], help='Solve down the epsilon schedule and verify')
    sweep = commands.add_parser('sweep', parents=[common], help='Repeat solve over values of one config key')
    sweep.add_argument('--axis', required=True, help=f'Config key to sweep, e.g. {", ".join(LabConfig.SWEEP_AXES)}')
    sweep.add_argument('--values', required=True, help='Comma-separated values for the axis')
    verify = commands.add_parser('verify', parents=[common], help='Re-run verification on a solved run')
    verify.add_argument('--run', required=True, help='Directory of a previous solve')
    commands.add_parser('dump-presets', parents=[common], help='Print or write the shipped presets')

    return parser.parse_args(argv)


def load_config(args) -> RunConfig:
    """Build and validate the run configuration from the command line"""
    if args.config:
        config = RunConfig.from_file(args.config)
    elif args.preset:
        config = RunConfig.from_preset(args.preset)
    else:
        config = RunConfig()
    if args.out:
        config = config.with_value('output.dir', args.out)
    if args.seed is not None:
        config = config.with_value('run.seed', args.seed)
    return config


def run_solve(config: RunConfig, threads: int) -> Dict:
    """Solve, persist and verify one configuration; returns a summary row"""
    out_dir = Path(config.output_dir)
    exporter = DataExporter(out_dir)
    config_hash = config.config_hash()
    exporter.export_config(config.to_text(), config_hash)

    solver = FreeBoundarySolver(config)
    trace = solver.run()
    CheckpointManager(out_dir).save_trace(trace, solver.grid.h)
    exporter.export_timing(trace)

    final = trace.final.field
    fb = extract_free_boundary(solver.grid, final)
    if not fb.is_empty:
        attach_gradients(solver.grid, final, fb)
    exporter.export_free_boundary(fb, config_hash)

    report = build_report(trace, solver.grid, solver.model, config, threads)
    exporter.export_report(report)
    return {
        "status": "passed" if report.passed else "verification_failed",
        "exit_code": EXIT_OK if report.passed else EXIT_VERIFICATION,
        "level": trace.final.level,
        "sharp_level": trace.final.sharp_level,
        "residual": trace.final.residual,
        "fb_median_abs": report.fb_condition.median_abs,
        "passed": report.passed,
        "config_hash": config_hash,
        "output_dir": str(out_dir),
    }


def cmd_solve(config: RunConfig, threads: int) -> int:
    handler = attach_log_file(Path(config.output_dir))
    try:
        row = run_solve(config, threads)
    except (SolverError, StructuralError) as e:
        logger.error(f"Solve failed: {e}")
        return EXIT_SOLVER
    finally:
        logging.getLogger().removeHandler(handler)
        handler.close()
    logger.info(f"Solve finished: {row['status']}, level {row['level']:.10g}")
    return row["exit_code"]


def cmd_sweep(config: RunConfig, axis: str, values: List[str], threads: int) -> int:
    """Run one solve per axis value concurrently; failures are recorded and the sweep continues"""
    base_dir = Path(config.output_dir)
    runs = []
    for value in values:
        run = config.with_value(axis, value)
        run = run.with_value('output.dir', str(base_dir / f"{axis}={value}"))
        runs.append((value, run))

    handler = attach_log_file(base_dir)
    lock = threading.Lock()
    rows: Dict[int, Dict] = {}

    def process(k: int, value: str, run: RunConfig):
        try:
            row = run_solve(run, 1)
        except Exception as e:
            # numpy and scipy failures are recorded like solver errors
            logger.error(f"Sweep run {axis}={value} failed: {type(e).__name__}: {e}")
            row = {"status": f"solver_error: {type(e).__name__}", "exit_code": EXIT_SOLVER,
                   "passed": False, "config_hash": run.config_hash(), "output_dir": run.output_dir}
        row.update({"axis": axis, "value": value})
        with lock:
            rows[k] = row

    try:
        with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
            futures = [executor.submit(process, k, value, run) for k, (value, run) in enumerate(runs)]
            for future in as_completed(futures):
                future.result()

        ordered = [rows[k] for k in range(len(runs))]
        first_failure = next((k for k, row in enumerate(ordered) if row["exit_code"] != EXIT_OK), None)
        for k, row in enumerate(ordered):
            row["first_failure"] = k == first_failure
        DataExporter(base_dir).export_summary(ordered, SUMMARY_COLUMNS, config.config_hash())
    finally:
        logging.getLogger().removeHandler(handler)
        handler.close()

    codes = {row["exit_code"] for row in ordered}
    if EXIT_SOLVER in codes:
        return EXIT_SOLVER
    return EXIT_VERIFICATION if EXIT_VERIFICATION in codes else EXIT_OK


def cmd_verify(run_dir: Path, out_dir: Optional[Path], threads: int, seed: Optional[int] = None) -> int:
    """Re-run verification from serialized artifacts"""
    config_path = run_dir / "config.cfg"
    if not config_path.exists():
        raise ArtifactNotFoundError(f"Missing {config_path}")
    config = RunConfig.from_file(config_path)
    trace = CheckpointManager(run_dir).load_trace()
    if trace.config_hash != config.config_hash():
        raise SchemaError(f"Config hash {config.config_hash()} does not match trace hash {trace.config_hash}")
    if seed is not None:
        config = config.with_value('run.seed', seed)

    out_dir = out_dir or run_dir / "verify"
    handler = attach_log_file(out_dir)
    try:
        report = build_report(trace, config.build_grid(), config.build_model(), config, threads)
        DataExporter(out_dir).export_report(report)
    finally:
        logging.getLogger().removeHandler(handler)
        handler.close()
    return EXIT_OK if report.passed else EXIT_VERIFICATION


def cmd_dump_presets(out_dir: Optional[Path]) -> int:
    for name in sorted(LabConfig.PRESETS):
        text = RunConfig.from_preset(name).to_text()
        if out_dir is None:
            print(f"# preset: {name}")
            print(text)
            continue
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"{name}.cfg").write_text(f"# preset: {name}\n{text}", encoding='utf-8')
        logger.info(f"Preset {name} written to {out_dir / f'{name}.cfg'}")
    return EXIT_OK


def run_cli(argv: Optional[List[str]] = None) -> int:
    """Main execution function"""
    args = parse_args(argv)
    setup_logging(args.log_level)

    try:
        if args.command == 'dump-presets':
            return cmd_dump_presets(Path(args.out) if args.out else None)
        if args.command == 'verify':
            # the run directory carries its own config; --out only redirects the report
            return cmd_verify(Path(args.run), Path(args.out) if args.out else None, args.threads, args.seed)
        config = load_config(args)
        if args.command == 'sweep':
            if args.axis not in RunConfig.keys():
                raise ConfigError(f"Unknown sweep axis '{args.axis}'")
            values = [v.strip() for v in args.values.split(',') if v.strip()]
            if not values:
                raise ConfigError("--values is empty")
            for value in values:
                config.with_value(args.axis, value)
            return cmd_sweep(config, args.axis, values, args.threads)
        return cmd_solve(config, args.threads)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_USAGE
    except SchemaError as e:
        logger.error(f"Schema error: {e}")
        return EXIT_SCHEMA
    except ArtifactNotFoundError as e:
        logger.error(f"Missing input: {e}")
        return EXIT_IO
    except FreeBoundaryLabError as e:
        logger.error(f"Run failed: {e}")
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(run_cli())
