"""Plain-text ``key=value`` configuration files.

Every field of :class:`~genfs.model.TrainConfig` has a default, so a minimal
file is a single ``dataset=...`` line. Blank lines and ``#`` comments are
ignored. Tuples are written comma-separated, booleans as ``true``/``false``.
"""
from __future__ import annotations

from dataclasses import fields
from pathlib import Path

from .errors import ConfigError
from .model import TrainConfig

CONFIG_VERSION = "genfs-config v1"
_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


def _coerce(name: str, raw: str, default):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(x) for x in raw.split(",") if x.strip())
        return raw
    except ValueError as exc:
        raise ConfigError(f"config key {name!r}: {exc}") from None


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text: str, **overrides) -> TrainConfig:
    defaults = {f.name: f.default for f in fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key == "format_version":
            if raw != CONFIG_VERSION:
                raise ConfigError(f"config format {raw!r} is not supported (expected {CONFIG_VERSION!r})")
            continue
        if key not in defaults:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw, defaults[key])
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_dict(values)


def format_config(cfg: TrainConfig) -> str:
    lines = [f"format_version={CONFIG_VERSION}"]
    lines += [f"{k}={_render(v)}" for k, v in cfg.to_dict().items()]
    return "\n".join(lines) + "\n"


def load_config(path, **overrides) -> TrainConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    return parse_config(path.read_text(encoding="utf-8"), **overrides)
