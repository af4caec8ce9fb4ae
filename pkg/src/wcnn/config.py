"""Flat `key = value` run configuration shared by the CLI commands.

One RunConfig captures everything a training run needs (architecture,
optimizer, data source, output directory), serializes to a diff-friendly
text form, and round-trips losslessly, so the `config.resolved` file
written into a run directory reproduces the run exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .errors import ConfigError

_TRUE = ("true", "1", "yes", "on")
_FALSE = ("false", "0", "no", "off")


@dataclass
class RunConfig:
    # data source: exactly one of these for training
    data: str | None = None
    synthetic: str | None = None
    out: str | None = None
    # architecture
    levels: int = 3
    base_channels: int = 32
    subband_mode: str = "all"
    image_size: int = 72  # ingestion / generation size (crop source)
    input_size: int = 64  # network input (crop target)
    # synthetic generation
    per_class_train: int = 100
    per_class_test: int = 50
    # optimization
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    flip: bool = True
    log_timing: bool = False


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key, raw):
    kind = _FIELD_TYPES[key]
    if kind in ("str | None", "str"):
        return raw
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            lowered = raw.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r} (expected {kind})") from None
    raise AssertionError(f"unhandled config field type {kind}")


def parse_config_text(text):
    """Parse `key = value` lines into a {key: typed value} dict."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line.rstrip()!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = _parse_value(key, raw)
    return out


def config_to_text(config):
    """Serialize every field, in declaration order; None fields are omitted."""
    lines = []
    for f in fields(RunConfig):
        value = getattr(config, f.name)
        if value is None:
            continue
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def load_config(path=None, overrides=None):
    """Defaults, then file values, then flag overrides."""
    merged = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                merged.update(parse_config_text(fh.read()))
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        merged[key] = value
    return RunConfig(**merged)
