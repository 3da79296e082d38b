"""Flat key-value config file parsing.

All on-disk configuration in this package (parameter bounds, GA settings,
dataset layouts, campaign configs) shares one trivial grammar:

    # full-line comments and blank lines are ignored
    key = value

Keys are dotted lowercase-ish identifiers, values are raw strings; typing is
the consumer's job. Duplicate keys are an error so typos cannot silently win.
"""

from __future__ import annotations

import os
from .errors import ConfigError


def parse_kv_text(text: str, source: str = "<string>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_kv_file(path) -> dict[str, str]:
    path = os.fspath(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_kv_text(text, source=path)


def coerce_float(mapping: dict[str, str], key: str, source: str = "config") -> float:
    try:
        return float(mapping[key])
    except ValueError as exc:
        raise ConfigError(f"{source}: key {key!r}: not a number: {mapping[key]!r}") from exc


def coerce_int(mapping: dict[str, str], key: str, source: str = "config") -> int:
    try:
        return int(mapping[key], 0)
    except ValueError as exc:
        raise ConfigError(f"{source}: key {key!r}: not an integer: {mapping[key]!r}") from exc
