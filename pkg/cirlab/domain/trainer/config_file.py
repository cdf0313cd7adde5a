"""Flat ``key = value`` run configuration files.

Keys are dotted paths into :class:`RunConfig` (``schedule.c = 0.5``). A
``[section]`` line prefixes the keys below it. Values are read as JSON when
they parse (numbers, booleans, ``[32, 32]``) and as bare strings otherwise.
"""

from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING, Any

import msgspec

from cirlab.domain.trainer.schemas import RunConfig
from cirlab.lib.exceptions import ConfigurationError
from cirlab.lib.schema import apply_overrides, flatten

if TYPE_CHECKING:
    from collections.abc import Iterable, Mapping

__all__ = ("dump_config", "load_run_config", "parse_assignments", "parse_config_text")


def parse_value(raw: str) -> Any:
    text = raw.strip()
    try:
        return msgspec.json.decode(text)
    except msgspec.DecodeError:
        return text


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    """Read dotted assignments, rejecting malformed lines by line number."""
    values: dict[str, Any] = {}
    section = ""
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            continue
        key, separator, raw = stripped.partition("=")
        if not separator or not key.strip():
            raise ConfigurationError(detail=f"{source}:{number}: expected 'key = value', got {line.strip()!r}")
        dotted = f"{section}.{key.strip()}" if section else key.strip()
        values[dotted] = parse_value(raw)
    return values


def parse_assignments(assignments: Iterable[str]) -> dict[str, Any]:
    """``key=value`` pairs from the command line."""
    values: dict[str, Any] = {}
    for item in assignments:
        key, separator, raw = item.partition("=")
        if not separator or not key.strip():
            raise ConfigurationError(detail=f"override {item!r} is not of the form key=value")
        values[key.strip()] = parse_value(raw)
    return values


def load_run_config(
    path: Path | str | None = None,
    overrides: Mapping[str, Any] | None = None,
    *,
    base: RunConfig | None = None,
) -> RunConfig:
    """Resolve a run configuration: ``base``, then the file, then ``overrides``.

    Raises:
        ConfigurationError: unknown key, unconvertible value, unreadable file,
            or a violated cross-field constraint.
    """
    config = base if base is not None else RunConfig()
    if path is not None:
        source = Path(path)
        try:
            text = source.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigurationError(detail=f"cannot read config file {source}: {exc.strerror}") from exc
        config = apply_overrides(config, parse_config_text(text, source=str(source)))
    if overrides:
        config = apply_overrides(config, dict(overrides))
    config.validate()
    return config


def dump_config(config: RunConfig) -> str:
    """Every field as a ``key = value`` line; :func:`parse_config_text` reads it back."""
    lines = [
        f"{key} = {msgspec.json.encode(value).decode()}"
        for key, value in flatten(msgspec.to_builtins(config)).items()
    ]
    return "\n".join(lines) + "\n"
