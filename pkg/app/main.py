import sys
from typing import Optional, Sequence

from app.cli.commands import build_parser
from app.common.errors import ConfigurationError, SpkvError
from app.common.logging.custom_logger import LogContext
from app.common.logging.logging_config import get_logger

logger = get_logger(__name__)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        return args.handler(args)
    except (ConfigurationError, FileNotFoundError) as e:
        logger.error("command_rejected", log_data=LogContext(context=args.command, message=str(e), exception=e))
        sys.stderr.write(f"error: {e}\n")
        return 2
    except (SpkvError, OSError) as e:
        logger.error("command_failed", log_data=LogContext(context=args.command, message=str(e), exception=e))
        sys.stderr.write(f"error: {e}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
