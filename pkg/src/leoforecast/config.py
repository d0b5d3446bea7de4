"""Flat ``key = value`` config files (``#`` comments, comma-separated lists)."""

from __future__ import annotations

import configparser
from pathlib import Path

__all__ = ["read_flat_config", "parse_flat_config", "coerce", "as_list"]

_SECTION = "config"


def parse_flat_config(text: str) -> dict[str, str]:
    parser = configparser.ConfigParser(
        delimiters=("=", ":"), comment_prefixes=("#", ";"), inline_comment_prefixes=("#",),
        interpolation=None,
    )
    parser.optionxform = str  # keep key case
    try:
        parser.read_string(f"[{_SECTION}]\n{text}")
    except configparser.Error as exc:
        raise ValueError(f"malformed config: {exc}") from None
    return dict(parser[_SECTION])


def read_flat_config(path: str | Path) -> dict[str, str]:
    return parse_flat_config(Path(path).read_text())


def coerce(raw: str):
    """Best-effort typed value: bool, None, int, float, else the stripped string."""
    s = raw.strip()
    low = s.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null", ""):
        return None
    for kind in (int, float):
        try:
            return kind(s)
        except ValueError:
            pass
    return s


def as_list(raw: str) -> list:
    return [coerce(item) for item in raw.split(",") if item.strip()]
