"""Flat ``key = value`` configuration files.

Keys use underscores or dashes interchangeably; ``#`` and ``;`` start comments.
"""
from __future__ import annotations

import configparser
from pathlib import Path

_SECTION = "config"


def load_config(path) -> dict:
    text = Path(path).read_text()
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        parser.read_string(f"[{_SECTION}]\n{text}", source=str(path))
    except configparser.Error as exc:
        raise ValueError(f"{path}: {exc}") from None
    return {k.replace("-", "_"): v.strip() for k, v in parser[_SECTION].items()}


def parse_pair(text, sep_chars="x,"):
    """``'32x32'`` or ``'32, 32'`` -> (32.0, 32.0)."""
    if isinstance(text, (tuple, list)):
        return tuple(text)
    for sep in sep_chars:
        if sep in text:
            a, b = text.split(sep, 1)
            return float(a), float(b)
    v = float(text)
    return v, v


def coerce(value, like):
    """Convert a config string to the type of ``like``."""
    if not isinstance(value, str):
        return value
    if isinstance(like, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    if isinstance(like, tuple):
        if len(like) != 2:
            return tuple(float(v) for v in value.replace(",", " ").split())
        a, b = parse_pair(value)
        return (type(like[0])(a), type(like[1])(b)) if like else (a, b)
    return value


def merge(defaults: dict, config: dict, flags: dict) -> dict:
    """Defaults, overridden by the config file, overridden by explicit flags."""
    unknown = set(config) - set(defaults)
    if unknown:
        raise ValueError(f"unknown configuration keys: {', '.join(sorted(unknown))}")
    out = dict(defaults)
    for key, value in config.items():
        out[key] = coerce(value, defaults[key]) if defaults[key] is not None else value
    for key, value in flags.items():
        if value is not None:
            out[key] = value
    return out
