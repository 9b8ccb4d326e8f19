import argparse
import logging
import sys
from typing import List, Optional

from app.core.config import settings
from app.core.exceptions import EXIT_OK, LabException
from app.core.logging import setup_logging
from app.services.experiment_service import export_report, load_config, run_experiment

logger = logging.getLogger(__name__)

# Subcommand -> tasks it runs; None means every task plus the summary
COMMANDS = {
    "simulate": ["simulate"],
    "verify-structure": ["verify-structure"],
    "verify-estimates": ["verify-estimates"],
    "attractor": ["attractor"],
    "run": None,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="artifact directory (overrides output_dir)")
    common.add_argument(
        "--log-level", default=settings.LOG_LEVEL, help="DEBUG, INFO, WARNING or ERROR"
    )

    experiment = argparse.ArgumentParser(add_help=False)
    experiment.add_argument("--config", required=True, help="YAML experiment file")
    experiment.add_argument("--seed", type=int, help="override the config seed")
    experiment.add_argument("--jobs", type=int, help="cap on concurrent trajectories")

    parser = argparse.ArgumentParser(
        prog="pullback-lab",
        description=f"{settings.APP_NAME}: reaction-diffusion pullback attractor experiments",
    )
    parser.add_argument("--version", action="version", version=settings.APP_VERSION)
    commands = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        commands.add_parser(name, parents=[common, experiment])
    commands.add_parser("report", parents=[common])
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)

    try:
        if args.command == "report":
            if not args.out:
                args.out = settings.DEFAULT_OUTPUT_DIR
            export_report(args.out)
            return EXIT_OK
        cfg = load_config(
            args.config, {"output_dir": args.out, "seed": args.seed, "jobs": args.jobs}
        )
        tasks = COMMANDS[args.command]
        manifest = run_experiment(cfg, tasks=tasks, report=tasks is None)
    except LabException as e:
        logger.error(e.detail)
        return e.exit_code
    return manifest.exit_code


if __name__ == "__main__":
    sys.exit(main())
