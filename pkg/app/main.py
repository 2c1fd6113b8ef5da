import argparse
import logging
import sys
from typing import List, Optional

from app.api.commands import COMMAND_GROUPS
from app.core.config import settings
from app.core.errors import SpinorError
from app.core.logging import configure_logging

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spinor",
        description="Spinor word embeddings in Clifford algebras Cl(p,q)",
    )
    parser.add_argument(
        "--log-level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        type=str.upper,
        default=None,
        help=f"defaults to {settings.LOG_LEVEL}",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    # Register command groups
    for group in COMMAND_GROUPS:
        group.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.handler(args)
    except SpinorError as exc:
        logger.error("%s", exc.detail)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
