"""
Offloading Benchmark - Main Entry Point

Command-line interface for the hierarchical-inference offloading toolkit:
configures logging, resolves the experiment config, and dispatches to the
sweep protocols. Exit codes: 0 success, 2 configuration error, 3 data error.
"""

import argparse
import logging
import os
import sys
from datetime import datetime
from typing import List, Optional

from Offloader.config import load_config
from Offloader.data.files import OutputManager
from Offloader.errors import ConfigError, DataError, OffloaderError
from Offloader.processing.experiments import COMMANDS, cmd_gen_data

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


# Configure logging
def configure_logging(level: str = "INFO", log_dir: Optional[str] = None) -> logging.Logger:
    """Configure application-wide logging"""
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]

    if log_dir:
        if not os.path.exists(log_dir):
            os.makedirs(log_dir)
        log_file = os.path.join(log_dir, f"offloader_{datetime.now().strftime('%Y%m%d_%H%M%S')}.log")
        handlers.append(logging.FileHandler(log_file))

    logging.basicConfig(level=getattr(logging, level), format=LOG_FORMAT, handlers=handlers, force=True)

    logger = logging.getLogger(__name__)
    logger.debug("Logging configured")
    return logger


def build_parser() -> argparse.ArgumentParser:
    # Flags are accepted before or after the subcommand
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, help="first run seed")
    common.add_argument("--seeds", type=int, help="number of consecutive seeds")
    common.add_argument("--out", help="output directory")
    common.add_argument("--config", help="KEY=VALUE config file")
    common.add_argument("--pseudo-loss", choices=["unbiased", "literal"], help="pseudo-loss variant")
    common.add_argument("--preset", help="named preset (reference, reference-low-fp, calibrated)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--workers", type=int, help="size of the worker pool")
    common.add_argument("--log-level", choices=LOG_LEVELS, help="logging level")

    parser = argparse.ArgumentParser(
        prog="offloader",
        description="Cost-sensitive hierarchical-inference offloading benchmark",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command")
    sub.add_parser("run", parents=[common], help="run the configured policies")
    sub.add_parser("sweep-beta", parents=[common], help="sweep the fixed offloading cost")
    sub.add_parser("sweep-asymmetry", parents=[common], help="sweep the ratio delta_fp / delta_fn")
    sub.add_parser("sweep-eta", parents=[common], help="sweep the learning rate")
    sub.add_parser("sweep-bits", parents=[common], help="sweep the score quantization")
    sub.add_parser("offline-opt", parents=[common], help="offline optimal thresholds")
    gen = sub.add_parser("gen-data", parents=[common], help="write the configured stream as CSV")
    gen.add_argument("--output", help="destination CSV (default <out>/dataset.csv)")
    sub.add_parser("frontier", parents=[common], help="FPR / FNR / cost of every fixed rule")
    sub.add_parser("regret", parents=[common], help="empirical regret across horizons")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main application entry point"""
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help(sys.stderr)
        return 2

    level = getattr(args, "log_level", "INFO")
    logger = configure_logging(level)

    try:
        flags = {
            "seed": getattr(args, "seed", None),
            "seeds": getattr(args, "seeds", None),
            "out": getattr(args, "out", None),
            "pseudo_loss": getattr(args, "pseudo_loss", None),
            "workers": getattr(args, "workers", None),
        }
        config = load_config(
            preset=getattr(args, "preset", None),
            config_path=getattr(args, "config", None),
            assignments=getattr(args, "set", None),
            flags=flags,
        )
        output = OutputManager(config.out)
        output.echo_config(config)
        logger = configure_logging(level, output.log_dir)
        logger.info(f"Running {args.command} into {config.out}")

        if args.command == "gen-data":
            cmd_gen_data(config, output, getattr(args, "output", None))
        elif args.command == "offline-opt":
            COMMANDS[args.command](config, output)
            with open(output.path("offline_opt.txt"), encoding="utf-8") as handle:
                sys.stdout.write(handle.read())
        else:
            COMMANDS[args.command](config, output)

        logger.info(f"{args.command} finished")
        return 0

    except (ConfigError, DataError) as e:
        logger.error(str(e))
        return e.exit_code
    except OffloaderError as e:
        logger.error(str(e), exc_info=True)
        return e.exit_code
    except Exception as e:
        logger.critical(f"Unexpected error: {str(e)}", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
