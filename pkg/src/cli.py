from typing import List, Optional

import argparse
import logging
import math

from src.app import App
from src.errors import ConfigError, DistOptError
from src.run_config import RunConfig, load_config
from src.util_classes import TerminationReason
from src.vars import LOG_DATE_FORMAT, LOG_FORMAT

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_CAP = 2
EXIT_DIVERGED = 3

TERMINATION_EXIT_CODES = {
    TerminationReason.CONVERGED: EXIT_OK,
    TerminationReason.ITERATION_CAP: EXIT_CAP,
    TerminationReason.DIVERGED: EXIT_DIVERGED,
}

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="distopt", description="Distributed optimization benchmarks for multi-robot problems")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("run", "Run one algorithm on one problem"),
                            ("sweep", "Run an RWC or step-size sweep"),
                            ("tune", "Tune one hyperparameter by golden-section search")):
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument("--config", required=True, help="Experiment JSON file")
        sub.add_argument("--out", help="Output directory (overrides the config)")
        sub.add_argument("--seed", type=int, help="Seed (overrides the config)")
        sub.add_argument("--quiet", action="store_true", help="Only log warnings and hide progress bars")
    return parser


def configure_logging(quiet: bool):
    logging.basicConfig(level=logging.WARNING if quiet else logging.INFO, format=LOG_FORMAT, datefmt=LOG_DATE_FORMAT)


def apply_overrides(config: RunConfig, out: Optional[str], seed: Optional[int]) -> RunConfig:
    updates = {}
    if out is not None:
        updates["out"] = out
    if seed is not None:
        if seed < 0:
            raise ConfigError(f"Seed must be non-negative, got {seed}", {"seed": str(seed)})
        updates["seed"] = seed
    return config.model_copy(update=updates) if updates else config


def cmd_run(app: App) -> int:
    summary, _ = app.run()
    logger.info(f"{summary.algorithm} on {summary.problem}: {summary.termination.value} after "
                f"{summary.iterations} iterations, MSE {summary.final_mse:.3e}")
    return TERMINATION_EXIT_CODES[summary.termination]


def cmd_sweep(app: App) -> int:
    frame = app.sweep()
    logger.info(f"Sweep wrote {len(frame)} rows to {app.config.out}")
    return EXIT_OK


def cmd_tune(app: App) -> int:
    tuned = app.tune_only()
    if not math.isfinite(tuned.score):
        logger.warning(f"Every {tuned.algorithm} evaluation diverged")
        return EXIT_DIVERGED
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "sweep": cmd_sweep,
    "tune": cmd_tune,
}


def main(argv: Optional[List[str]] = None) -> int:
    """
    Parse arguments, load the experiment file and dispatch the subcommand.

    Returns:
        int: 0 converged (or finished), 1 configuration error, 2 iteration cap, 3 divergence.
    """
    args = build_parser().parse_args(argv)
    configure_logging(args.quiet)
    try:
        config = apply_overrides(load_config(args.config), args.out, args.seed)
        app = App(config, progress=not args.quiet)
        return COMMANDS[args.command](app)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        for field, message in e.diagnostics.items():
            logger.error(f"  {field}: {message}")
        return EXIT_CONFIG
    except DistOptError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_CONFIG
