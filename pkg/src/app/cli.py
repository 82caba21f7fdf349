import argparse
import json
import logging
from pathlib import Path
from typing import Optional, Sequence

from pydantic import ValidationError

from app.commands import cmd_check, cmd_eval, cmd_generate, cmd_train, load_experiment
from app.logger import close_file_handlers, setup_logger
from lfr_augment.errors import LfrAugmentException
from shared.config import ExperimentConfig
from shared.experiment_paths import paths_for

LOGGER_NAME = "global_logger"

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lfr-augment",
        description="Augment first-principles state-space models with learned components.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="DEBUG on the console")
    sub = parser.add_subparsers(dest="command", required=True)

    generate = sub.add_parser("generate", help="simulate the mass-spring-damper benchmark")
    generate.add_argument("--config", type=Path, help="experiment JSON with a generate section")
    generate.add_argument("--out", help="output directory (default: $LFR_AUGMENT_OUTPUT_DIR or ./out)")
    generate.add_argument("--seed", type=int, help="overrides the configured seed")

    check = sub.add_parser("check", help="well-posedness report of a checkpoint or pattern")
    check.add_argument("--config", type=Path, required=True, help="checkpoint or pattern JSON")
    check.add_argument("--seed", type=int, default=0, help="seed of the sampled determinants")
    check.add_argument("--samples", type=int, default=16, help="sampled Jacobian points")

    train = sub.add_parser("train", help="run the identification pipeline")
    train.add_argument("--config", type=Path, required=True, help="experiment JSON")
    train.add_argument("--out", help="output directory")
    train.add_argument("--seed", type=int, help="overrides the training seed")

    evaluate = sub.add_parser("eval", help="score a checkpoint on a dataset")
    evaluate.add_argument("--config", type=Path, required=True, help="checkpoint JSON")
    evaluate.add_argument("--data", type=Path, required=True, help="dataset CSV")
    evaluate.add_argument("--out", help="directory holding results.csv")
    evaluate.add_argument("--metric", choices=("rmse", "nrms"), default="rmse")
    evaluate.add_argument(
        "--x0",
        choices=("zero", "encoder"),
        default="zero",
        help="initial state: rest, or the encoder estimate after the lag window",
    )
    return parser


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "check":
        report = cmd_check(args.config, sample_count=args.samples, seed=args.seed)
        return EXIT_OK if report.verdict else EXIT_FAILURE

    paths = paths_for(args.out)
    setup_logger(
        LOGGER_NAME,
        paths.log_file,
        console_level=logging.DEBUG if args.verbose else logging.INFO,
    )
    if args.command == "generate":
        config = load_experiment(args.config) if args.config else ExperimentConfig()
        cmd_generate(config, paths, args.seed)
    elif args.command == "train":
        cmd_train(load_experiment(args.config), paths, args.seed)
    elif args.command == "eval":
        cmd_eval(args.config, args.data, paths, args.metric, args.x0)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand; 0 on success, 1 on semantic failure, 2 on usage or parse errors."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_USAGE

    setup_logger(LOGGER_NAME, console_level=logging.DEBUG if args.verbose else logging.INFO)
    logger = logging.getLogger(LOGGER_NAME)
    try:
        return _dispatch(args)
    except (json.JSONDecodeError, ValidationError) as e:
        logger.error(f"Invalid input: {e}")
        return EXIT_USAGE
    except OSError as e:
        logger.error(f"Cannot access file: {e}")
        return EXIT_USAGE
    except LfrAugmentException as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_FAILURE
    finally:
        close_file_handlers(LOGGER_NAME)
