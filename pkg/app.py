"""
Command-line entry point for imputation-gain experiments.

    python app.py <command> [--config FILE] [--set key=value ...] [--seed N] [--output-dir DIR] [--threads N]
"""
import argparse
import logging
import sys
from typing import List, Optional

from dotenv import load_dotenv

from core.errors import ConfigError, DataError, MissingArtifactError, NumericalError
from core.settings import ConfigLoader, get_settings
from services.pipeline import COMMANDS, ExperimentPipeline

logger = logging.getLogger("app")

COMMAND_HELP = {
    "synth": "write a synthetic hourly load dataset",
    "mask": "simulate missing runs on the training (and validation) series",
    "impute": "fill the masked steps with the baseline and candidate imputers",
    "train": "train the forecaster on the baseline labels and record its trajectory",
    "estimate": "estimate label-swap gains with every configured estimator",
    "oracle": "retrain with swapped labels to measure the true gains",
    "ensemble": "splice the top positive-gain candidate labels into the baseline and retrain",
    "report": "assemble MSE tables, agreement curves and timings",
    "toy": "compare imputation accuracy with forecasting accuracy on two simulated cases",
    "pipeline": "run mask, impute, train, estimate, oracle, ensemble and report in order",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="app.py",
        description="Estimate the effect of imputed training labels on a forecasting model",
    )
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="command")
    for command in COMMANDS:
        sub = subparsers.add_parser(command, help=COMMAND_HELP[command])
        sub.add_argument("--config", default="experiment_default.json",
                         help="JSON experiment file, as a path or a name under config/")
        sub.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                         help="dotted override, e.g. --set train.learning_rate=0.05 (repeatable)")
        sub.add_argument("--seed", type=int, help="global seed")
        sub.add_argument("--output-dir", help="directory for this experiment's artifacts")
        sub.add_argument("--threads", type=int, help="parallel oracle retrains")
        sub.add_argument("-v", "--verbose", action="store_true", help="debug logging")
        if command == "synth":
            sub.add_argument("--out", help="output CSV (default: <output-dir>/data/synthetic_load.csv)")
            sub.add_argument("--days", type=int, default=120, help="number of days to generate")
    return parser


def collect_overrides(args: argparse.Namespace) -> List[str]:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides += [f"seed={args.seed}", f"train.seed={args.seed}"]
    if args.output_dir:
        overrides.append(f"output_dir={args.output_dir}")
    if args.threads is not None:
        overrides.append(f"threads={args.threads}")
    return overrides


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    settings = get_settings()
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else getattr(logging, settings.log_level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        config = ConfigLoader(config_file=args.config).load(collect_overrides(args),
                                                            check_files=args.command != "synth")
        pipeline = ExperimentPipeline(config, settings)
        if args.command == "synth":
            pipeline.cmd_synth(path=args.out, n_days=args.days)
        else:
            pipeline.run(args.command)
        return 0
    except ConfigError as e:
        logger.error(f"configuration error: {e}")
        return e.exit_code
    except (DataError, MissingArtifactError) as e:
        logger.error(f"data error: {e}")
        return e.exit_code
    except NumericalError as e:
        logger.error(f"numerical error: {e}")
        return e.exit_code
    except Exception as e:
        logger.debug("unexpected failure", exc_info=True)
        logger.error(f"{args.command} failed: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
