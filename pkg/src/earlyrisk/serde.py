"""Small helpers for strict JSON config parsing."""

from __future__ import annotations

from .errors import ConfigError


def check_keys(doc: dict, allowed, where: str) -> None:
    """Reject unknown keys so config typos fail loudly."""
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected a JSON object")
    unknown = set(doc) - set(allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")


def as_float(doc: dict, key: str, default, where: str):
    value = doc.get(key, default)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: {key} must be a number, got {value!r}")
    return float(value)


def as_int(doc: dict, key: str, default, where: str):
    value = doc.get(key, default)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where}: {key} must be an integer, got {value!r}")
    return int(value)


def as_str(doc: dict, key: str, default, where: str):
    value = doc.get(key, default)
    if value is not None and not isinstance(value, str):
        raise ConfigError(f"{where}: {key} must be a string, got {value!r}")
    return value
