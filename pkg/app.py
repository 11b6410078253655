# app.py
import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from src.pipeline.checks import CHECKS, run_checks
from src.pipeline.config import load_config
from src.pipeline.experiment import SUITE_PRESETS, run_experiment, run_suite
from src.utils import ConfigError, NumericalError, load_settings, setup_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Poisson phase retrieval: runs, comparison suites and self-checks")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory (default: $PPR_OUTPUT_DIR)")
    common.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted-key override, e.g. algorithm.step=backtracking (repeatable)")
    common.add_argument("--log-level", help="logging level (default: $PPR_LOG_LEVEL)")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run one experiment")
    suite = sub.add_parser("suite", parents=[common], help="run a comparison preset over seeds")
    suite.add_argument("--preset", required=True, choices=sorted(SUITE_PRESETS))
    suite.add_argument("--seeds", type=int, nargs="+", default=list(range(10)))
    check = sub.add_parser("check", parents=[common], help="run the invariant self-checks")
    check.add_argument("--only", nargs="+", choices=sorted(CHECKS), help="subset of checks")
    return parser


def _overrides(args) -> List[str]:
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return overrides


def cmd_run(args, output_root: str) -> int:
    config = load_config(args.config, _overrides(args))
    result = run_experiment(config, os.path.join(output_root, config.name))
    print(json.dumps({k: result.summary[k] for k in ("algorithm", "status", "final_cost", "final_nrmse",
                                                     "final_psnr")}, indent=2))
    print(f"Artifacts written to {result.run_dir}")
    return EXIT_NUMERICAL if result.failed else EXIT_OK


def cmd_suite(args, output_root: str) -> int:
    base = load_config(args.config, args.override)
    result = run_suite(args.preset, args.seeds, base, os.path.join(output_root, f"suite_{args.preset}"))
    print(result.summary.to_string(index=False))
    print(f"Suite outputs written to {result.output_dir}")
    if result.failures:
        logger.warning(f"{len(result.failures)} runs ended early: {result.failures}")
    return EXIT_OK


def cmd_check(args, output_root: str) -> int:
    report_path = os.path.join(output_root, "check_report.json")
    report = run_checks(seed=args.seed or 0, names=args.only, report_path=report_path)
    for entry in report["checks"]:
        print(f"{'PASS' if entry['passed'] else 'FAIL'}  {entry['name']}  ({entry['seconds']:.2f}s)")
    print(f"Report written to {report_path}")
    return EXIT_OK if report["passed"] else EXIT_NUMERICAL


COMMANDS = {"run": cmd_run, "suite": cmd_suite, "check": cmd_check}


def main(argv: Optional[List[str]] = None) -> int:
    """Command-line interface for the application"""
    args = build_parser().parse_args(argv)
    setup_logging(level=args.log_level)
    output_root = args.out or load_settings().output_dir

    try:
        return COMMANDS[args.command](args, output_root)
    except NumericalError as e:
        logger.error(f"Numerical failure: {str(e)}")
        print(f"Numerical failure: {str(e)}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, ValueError, TypeError) as e:
        # DomainError lands here too: e.g. MM asked to majorize with b = 0
        logger.error(f"Configuration error: {str(e)}")
        print(f"Configuration error: {str(e)}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
