"""Command-line entry point: ``epmbench <subcommand> [options]``."""

import argparse
import logging
import sys
import time
from collections.abc import Sequence
from pathlib import Path

from pydantic import ValidationError

from epmb_core.errors import ConfigError, EpmbError
from epmb_pipeline.commands import COMMANDS, DENOISE_METHODS, RunConfig
from epmb_pipeline.config import bench_config
from epmb_pipeline.denoise.model import Objective
from epmb_pipeline.worker import WorkerPool

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")
_COMMON = ("command", "manifest", "method", "seed", "out", "threads", "log_level")


def setup_logging(level: str | None = None) -> None:
    """Configure logging for the application."""
    logging.basicConfig(
        level=getattr(logging, (level or bench_config.log_level).upper()),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
        stream=sys.stderr,
        force=True,
    )


def _common_options() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--seed", type=int, default=None, help=f"RNG seed (default: {bench_config.seed})")
    parser.add_argument(
        "--threads",
        type=int,
        default=bench_config.threads,
        help=f"Worker threads (default: EPMBENCH_THREADS or {bench_config.threads})",
    )
    parser.add_argument("--out", type=Path, default=Path("out"), help="Output directory (default: out)")
    parser.add_argument("--log-level", choices=LOG_LEVELS, default=None, help="Override EPMBENCH_LOG_LEVEL")
    return parser


def _labeling_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--ground-truth", action="store_true", help="Label with the simulator's true thresholds and offset"
    )
    parser.add_argument("--epm-dir", type=Path, default=None, help="Read precomputed EPM frames instead of labeling")
    parser.add_argument("--no-blur-correction", action="store_true", help="Use the sharp-frame EPM only")


def _baseline_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--dt-us",
        type=int,
        default=None,
        help=f"Baseline time window in microseconds (default: {bench_config.baseline_dt_us})",
    )
    parser.add_argument(
        "--radius",
        type=int,
        default=None,
        help=f"Baseline neighbourhood radius (default: {bench_config.baseline_radius})",
    )
    parser.add_argument("--model", type=Path, default=None, help="Trained model for method 'model'")


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="epmbench", description="Event-probability-mask benchmark for DVS denoisers"
    )
    common = _common_options()
    commands = parser.add_subparsers(dest="command", required=True, metavar="command")

    simulate = commands.add_parser("simulate", parents=[common], help="Simulate a labeled dataset")
    simulate.add_argument("--config", type=Path, default=None, help="Simulation config JSON (default: demo scene)")

    inject = commands.add_parser("inject-noise", parents=[common], help="Copy a dataset with fresh sensor noise")
    inject.add_argument("--manifest", type=Path, required=True)
    rate = inject.add_mutually_exclusive_group()
    rate.add_argument("--ba-percent", type=float, default=None, help="Background activity as %% of signal events")
    rate.add_argument("--ba-rate", type=float, default=None, help="Background activity in Hz per pixel")
    inject.add_argument("--hole-prob", type=float, default=None, help="Probability of dropping a real event")
    inject.add_argument("--jitter-sigma", type=float, default=None, help="Timestamp jitter in microseconds")
    inject.add_argument("--count-gain-sigma", type=float, default=None, help="Per-pixel threshold mismatch")

    label = commands.add_parser("label", parents=[common], help="Compute one EPM frame per exposure")
    label.add_argument("--manifest", type=Path, required=True)
    label.add_argument("--ground-truth", action="store_true", help="Use the simulator's true parameters")
    label.add_argument("--no-blur-correction", action="store_true", help="Use the sharp-frame EPM only")

    calibrate = commands.add_parser("calibrate", parents=[common], help="Estimate thresholds and offset")
    calibrate.add_argument("--manifest", type=Path, required=True)
    calibrate.add_argument("--search-config", type=Path, default=None, help="Search config JSON")
    calibrate.add_argument("--no-blur-correction", action="store_true", help="Use the sharp-frame EPM only")
    calibrate.add_argument("--force", action="store_true", help="Ignore a cached calibration")

    denoise = commands.add_parser("denoise", parents=[common], help="Filter the events of a dataset")
    denoise.add_argument("--manifest", type=Path, required=True)
    denoise.add_argument("--method", choices=DENOISE_METHODS, default="baf")
    _baseline_options(denoise)

    train = commands.add_parser("train", parents=[common], help="Train the learned denoiser")
    train.add_argument("--manifest", type=Path, action="append", dest="manifests", required=True)
    train.add_argument(
        "--objective", dest="method", choices=[o.value for o in Objective], default=None, help="Loss to minimize"
    )
    train.add_argument("--training-config", type=Path, default=None, help="Training config JSON")
    _labeling_options(train)

    bench = commands.add_parser("bench", parents=[common], help="Score denoisers against the EPM")
    bench.add_argument("--manifest", type=Path, required=True)
    bench.add_argument("--methods", nargs="*", choices=DENOISE_METHODS, default=[], metavar="METHOD")
    bench.add_argument("--sweep", nargs="+", type=float, default=None, metavar="PERCENT", help="Noise sweep levels")
    _baseline_options(bench)
    _labeling_options(bench)

    report = commands.add_parser("report", parents=[common], help="Merge benchmark tables")
    report.add_argument("inputs", nargs="+", type=Path, help="bench.csv files")
    return parser


def run_config(args: argparse.Namespace) -> RunConfig:
    """Validate parsed arguments.

    Raises:
        ConfigError: If a common option is out of range
    """
    namespace = vars(args)
    parameters = {key: value for key, value in namespace.items() if key not in _COMMON}
    try:
        return RunConfig(
            command=args.command,
            manifest=namespace.get("manifest"),
            method=namespace.get("method"),
            parameters=parameters,
            seed=args.seed,
            out=args.out,
            threads=args.threads,
        )
    except ValidationError as e:
        error = e.errors()[0]
        location = ".".join(str(part) for part in error["loc"])
        raise ConfigError(f"Invalid option {location}: {error['msg']}") from e


def main(argv: Sequence[str] | None = None) -> int:
    """Run one subcommand; returns the process exit status."""
    args = build_arg_parser().parse_args(argv)
    setup_logging(args.log_level)
    logger = logging.getLogger(__name__)

    started = time.perf_counter()
    try:
        config = run_config(args)
        with WorkerPool(config.threads) as pool:
            paths = COMMANDS[config.command](config, pool)
    except EpmbError as e:
        message = " ".join(str(e).split())
        sys.stderr.write(f"error: {type(e).__name__}: {message}\n")
        return 1
    except KeyboardInterrupt:
        sys.stderr.write("error: interrupted\n")
        return 130
    elapsed_ms = (time.perf_counter() - started) * 1000
    for path in paths:
        logger.debug(f"Wrote {path}")
    logger.info(f"{config.command} finished in {elapsed_ms:.0f} ms")
    return 0


if __name__ == "__main__":
    sys.exit(main())
