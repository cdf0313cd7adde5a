from __future__ import annotations

from typing import Any, TypeVar

import msgspec

from cirlab.lib.exceptions import ConfigurationError

StructT = TypeVar("StructT", bound=msgspec.Struct)


class BaseStruct(msgspec.Struct):
    """Mutable record serialized with msgspec."""


class FrozenStruct(BaseStruct, frozen=True, forbid_unknown_fields=True):
    """Immutable configuration struct; unknown keys are rejected on conversion."""


def flatten(data: dict[str, Any], prefix: str = "") -> dict[str, Any]:
    """Flatten a nested mapping into dotted keys.

    Args:
        data: nested mapping, as produced by ``msgspec.to_builtins``.
        prefix: key prefix applied to every entry.

    Returns:
        A single level mapping of ``section.key`` to leaf values.
    """
    flat: dict[str, Any] = {}
    for key, value in data.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten(value, prefix=f"{dotted}."))
        else:
            flat[dotted] = value
    return flat


def unflatten(flat: dict[str, Any]) -> dict[str, Any]:
    nested: dict[str, Any] = {}
    for dotted, value in flat.items():
        *sections, leaf = dotted.split(".")
        node = nested
        for section in sections:
            node = node.setdefault(section, {})
        node[leaf] = value
    return nested


def apply_overrides(base: StructT, overrides: dict[str, Any]) -> StructT:
    """Return a copy of ``base`` with dotted-key overrides applied.

    Values may be strings; they are coerced to the field types with msgspec's
    lax conversion.

    Raises:
        ConfigurationError: an override names a key that does not exist, or a
            value cannot be converted to the field type.
    """
    current = flatten(msgspec.to_builtins(base))
    for key, value in overrides.items():
        if key not in current:
            raise ConfigurationError.unknown_key(key, current)
        current[key] = value
    try:
        return msgspec.convert(unflatten(current), type(base), strict=False)
    except msgspec.ValidationError as exc:
        raise ConfigurationError(detail=f"Invalid configuration value: {exc}") from exc
