from __future__ import annotations

from contextlib import contextmanager
from typing import TYPE_CHECKING

from structlog.contextvars import bind_contextvars, bound_contextvars, clear_contextvars

if TYPE_CHECKING:
    from collections.abc import Iterator
    from typing import Any

    from structlog.types import EventDict, WrappedLogger

RUN_LABEL_KEYS = ("run", "seed", "preset", "experience")


def add_run_labels(_: WrappedLogger, __: str, event_dict: EventDict) -> EventDict:
    """Group run identifiers under a ``labels`` key for JSON consumers.

    Args:
        _: Wrapped logger object.
        __: Name of the wrapped method, e.g., "info", "warning", etc.
        event_dict: Current context with current event, e.g, `{"a": 42, "event": "foo"}`.

    Returns:
        `event_dict` with ``severity`` in place of ``level`` and run identifiers nested.
    """
    if "level" in event_dict:
        event_dict["severity"] = event_dict.pop("level")
    labels = {key: event_dict.pop(key) for key in RUN_LABEL_KEYS if key in event_dict}
    event_dict["labels"] = labels or None
    return event_dict


@contextmanager
def run_context(**labels: Any) -> Iterator[None]:
    """Ensure a run logs with a clean structlog context.

    Everything bound inside the block is dropped when it exits, so
    back-to-back runs in one process (ablations) never leak labels.
    """
    clear_contextvars()
    bind_contextvars(**labels)
    try:
        yield
    finally:
        clear_contextvars()


@contextmanager
def experience_context(index: int) -> Iterator[None]:
    with bound_contextvars(experience=index):
        yield
