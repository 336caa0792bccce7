"""Minimal key=value config parsing shared by calibration files and CLI
overrides.

Lines hold ``key = value`` pairs; ``#`` starts a comment; optional
``[section]`` headers prefix subsequent keys as ``section.key``. Values are
returned as raw strings so callers own the type conversions.
"""

from __future__ import annotations

from pathlib import Path


class ConfigFormatError(ValueError):
    """Raised for config lines that are not comments, sections, or pairs."""


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if not section:
                raise ConfigFormatError(f"{source}:{lineno}: empty section name")
            continue
        if "=" not in line:
            raise ConfigFormatError(f"{source}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigFormatError(f"{source}:{lineno}: empty key")
        full = f"{section}.{key}" if section else key
        out[full] = value.strip()
    return out


def read_config(path: str | Path) -> dict[str, str]:
    return parse_config_text(Path(path).read_text(encoding="ascii"), str(path))


def config_floats(cfg: dict[str, str], key: str, count: int) -> list[float]:
    """Parse a whitespace-separated float list value of a fixed length."""
    if key not in cfg:
        raise ConfigFormatError(f"missing config key '{key}'")
    parts = cfg[key].split()
    if len(parts) != count:
        raise ConfigFormatError(
            f"config key '{key}' needs {count} values, got {len(parts)}"
        )
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise ConfigFormatError(f"config key '{key}': {exc}") from None
