import argparse
import logging
from typing import List, Optional

from osatcom.core.errors import ConfigParseError
from osatcom.models.schemas import RunReport, RunStatus
from osatcom.services.experiment_service import experiment_service

logger = logging.getLogger(__name__)

EXIT_CODES = {
    RunStatus.OK: 0,
    RunStatus.INVALID: 1,
    RunStatus.INFEASIBLE: 2,
    RunStatus.ERROR: 3,
}


def _u64(value: str) -> int:
    seed = int(value)
    if not 0 <= seed < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must fit in 64 unsigned bits, got {value}")
    return seed


def _positive(value: str) -> int:
    count = int(value)
    if count < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return count


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="osatcom",
        description="Robust beamforming, pulse design and link simulation for optical SATCOM networks",
    )
    parser.add_argument("--quiet", action="store_true", help="only log warnings and errors")
    subparsers = parser.add_subparsers(dest="command", required=True)

    run = subparsers.add_parser("run", help="run an experiment config")
    run.add_argument("config", help="path to a JSON experiment config")
    run.add_argument("--seed", type=_u64, help="override the config seed")
    run.add_argument("--out", help="override the output directory")
    run.add_argument("--trials", type=_positive, help="override the Monte Carlo trial count")
    run.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS, help=argparse.SUPPRESS)

    validate = subparsers.add_parser("validate", help="check a config without running it")
    validate.add_argument("config", help="path to a JSON experiment config")
    validate.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    return parser


def _print_report(report: RunReport) -> None:
    if report.status == RunStatus.OK:
        for output in report.outputs:
            print(output)
        return
    print(f"{report.status.value}: {report.reason or 'failed'}")
    for problem in report.problems:
        print(f"  - {problem}")


def run_command(args: argparse.Namespace) -> int:
    """Run an experiment file; returns the process exit code."""
    try:
        config = experiment_service.load_config(args.config)
        config = experiment_service.apply_overrides(config, seed=args.seed, out=args.out, trials=args.trials)
    except ConfigParseError as e:
        report = RunReport(status=RunStatus.INVALID, problems=e.problems, reason=str(e))
    except OSError as e:
        report = RunReport(status=RunStatus.ERROR, reason=f"cannot read config: {e}")
    else:
        try:
            report = experiment_service.run(config)
        except Exception as e:
            logger.exception("Experiment crashed")
            report = RunReport(status=RunStatus.ERROR, reason=f"Processing error: {str(e)}")
    _print_report(report)
    return EXIT_CODES[report.status]


def validate_command(args: argparse.Namespace) -> int:
    try:
        report = experiment_service.validate(args.config)
    except OSError as e:
        report = RunReport(status=RunStatus.ERROR, reason=f"cannot read config: {e}")
    if report.status == RunStatus.OK:
        print("ok")
    else:
        _print_report(report)
    return EXIT_CODES[report.status]


COMMANDS = {
    "run": run_command,
    "validate": validate_command,
}


def dispatch(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.quiet:
        logging.getLogger().setLevel(logging.WARNING)
    return COMMANDS[args.command](args)
