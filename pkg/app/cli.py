"""Command line entry point: ``efa run|sweep|check``.

Sets up logging, dispatches to the experiment and check services and maps
failures to exit codes: 2 for package errors, 1 for failed checks.
"""

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

import structlog

from app import __version__
from app.core.config import settings
from app.core.exceptions import EFAError
from app.core.logging import setup_logging
from app.schemas.experiment import load_experiment
from app.services.check_service import AcceptanceSuite
from app.services.experiment_service import ExperimentService

logger = structlog.get_logger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_ERROR = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="efa", description=settings.PROJECT_DESCRIPTION)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--out", type=Path, default=None, help="output directory")
    parser.add_argument("--workers", type=int, default=None, help="worker threads for independent jobs")
    parser.add_argument("--quiet", action="store_true", help="only log warnings and errors")

    commands = parser.add_subparsers(dest="command", required=True)
    run = commands.add_parser("run", help="run an experiment file")
    run.add_argument("config", type=Path)
    sweep = commands.add_parser("sweep", help="run an upscaling error sweep")
    sweep.add_argument("config", type=Path)
    check = commands.add_parser("check", help="run the acceptance suite")
    check.add_argument("--full", action="store_true", help="include the solution-level comparisons")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging("WARNING" if args.quiet else None)
    if args.workers is not None and args.workers < 1:
        logger.error("invalid_workers", workers=args.workers)
        return EXIT_ERROR

    try:
        if args.command == "check":
            out = args.out or Path(settings.OUTPUT_DIR)
            results = AcceptanceSuite(out, full=args.full, workers=args.workers).run()
            failed = [r.criterion for r in results if not r.passed]
            if failed:
                logger.warning("checks_failed", criteria=failed)
                return EXIT_CHECK_FAILED
            logger.info("checks_passed", count=len(results))
            return EXIT_OK

        cfg = load_experiment(args.config)
        service = ExperimentService(cfg, args.out, args.workers)
        report = service.sweep() if args.command == "sweep" else service.run()
        logger.info(
            "experiment_finished",
            experiment=report.name,
            points=len(report.rows),
            slopes={f"{s.p}:{s.q}": s.slope for s in report.slopes},
        )
        return EXIT_OK
    except EFAError as exc:
        logger.error("run_failed", command=args.command, error_type=type(exc).__name__, error=str(exc))
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
