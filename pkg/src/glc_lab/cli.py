import argparse
import logging
import sys
from typing import List, Optional

from glc_lab.config import DEFAULT_LOG_LEVEL, DEFAULT_WORKERS, ConfigError, parse_config
from glc_lab.pipeline import SUBCOMMANDS, run


logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glc-lab",
        description="Numerical audits for the fully discrete Ginzburg-Landau equation with dynamic boundary conditions.",
    )
    parser.add_argument("subcommand", choices=SUBCOMMANDS, help="pipeline to run")
    parser.add_argument("--config", default=None, help="key = value config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    parser.add_argument("--out", default=None, help="output directory (default: config out_dir)")
    parser.add_argument("--workers", type=int, default=DEFAULT_WORKERS, help="worker threads for sweeps")
    parser.add_argument("--log-level", default=DEFAULT_LOG_LEVEL, help="logging level")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        config = parse_config(args.config, args.overrides)
    except ConfigError as exc:
        logger.error("invalid config: %s", exc)
        return 2
    report = run(args.subcommand, config, out_dir=args.out, workers=args.workers)
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
