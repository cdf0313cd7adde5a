from __future__ import annotations

import logging
import sys
from functools import lru_cache
from typing import TYPE_CHECKING

import structlog

from cirlab.lib.log import add_run_labels

if TYPE_CHECKING:
    from structlog.types import Processor

    from cirlab.lib.settings import Settings


@lru_cache
def _is_tty() -> bool:
    return bool(sys.stderr.isatty() or sys.stdout.isatty())


def _as_json(settings: Settings) -> bool:
    if settings.log.FORMAT == "json":
        return True
    if settings.log.FORMAT == "console":
        return False
    return not _is_tty()


def default_structlog_processors(as_json: bool) -> list[Processor]:
    processors: list[Processor] = [
        structlog.contextvars.merge_contextvars,
        structlog.processors.add_log_level,
        structlog.processors.TimeStamper(fmt="iso", utc=True),
        structlog.processors.StackInfoRenderer(),
    ]
    if as_json:
        processors.extend(
            [
                add_run_labels,
                structlog.processors.format_exc_info,
                structlog.processors.JSONRenderer(),
            ],
        )
    else:
        processors.append(structlog.dev.ConsoleRenderer(colors=_is_tty()))
    return processors


def configure_logging(settings: Settings | None = None) -> None:
    """Install the structlog pipeline for the current process.

    Args:
        settings: settings to read the level and renderer from. Defaults to
            the process settings.
    """
    if settings is None:
        from cirlab.lib.settings import get_settings

        settings = get_settings()
    as_json = _as_json(settings)
    log_level = getattr(logging, settings.log.LEVEL, logging.INFO)
    structlog.configure(
        processors=default_structlog_processors(as_json=as_json),
        wrapper_class=structlog.make_filtering_bound_logger(log_level),
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=False,
    )
