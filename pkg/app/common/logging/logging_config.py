import logging
import sys

import structlog

from app.common.logging.custom_logger import LogContext

_LEVELS = {
    "debug": logging.DEBUG,
    "info": logging.INFO,
    "warn": logging.WARN,
    "warning": logging.WARN,
    "error": logging.ERROR,
}


def get_log_level(configured_log_level: str) -> int:
    # info | warn | debug | error
    return _LEVELS.get(configured_log_level.lower(), logging.INFO)


def log_data_processor(logger, method_name: str, events: dict) -> dict:
    log_data = events.pop("log_data", None)
    if isinstance(log_data, LogContext):
        events.update(log_data.as_dict())
    return events


log_processors = [
    structlog.stdlib.add_log_level,
    structlog.stdlib.PositionalArgumentsFormatter(),
    log_data_processor,
    structlog.processors.TimeStamper(fmt="iso"),
    structlog.processors.JSONRenderer(),
]


def configure_logging(log_level: str = "info") -> None:
    """(Re)configure structlog; called once at import and again by the CLI with the run's level."""
    structlog.configure(
        processors=log_processors,
        context_class=dict,
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        wrapper_class=structlog.make_filtering_bound_logger(get_log_level(log_level)),
        cache_logger_on_first_use=False,
    )


def get_logger(name: str) -> structlog.typing.FilteringBoundLogger:
    return structlog.get_logger(name)


configure_logging()
