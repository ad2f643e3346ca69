"""Run configuration: one section per stage, loadable from JSON and overridable by dotted flags."""
from __future__ import annotations

import json
import typing
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional, Sequence

from .aligner import AlignmentConfig
from .chunker import ChunkingConfig
from .datafilter import FilterConfig
from .decode import DecodeConfig
from .model import ModelConfig
from .synthcorpus import SynthConfig


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 1
    seed: int = 0
    pretrain_steps: int = 200
    pretrain_lr: float = 1e-3
    log_every: int = 0

    def __post_init__(self):
        if self.steps < 0 or self.pretrain_steps < 0:
            raise ValueError("train.steps and train.pretrain_steps must be >= 0")
        if self.batch_size < 1:
            raise ValueError(f"train.batch_size must be >= 1, got {self.batch_size}")


_SECTIONS = {
    "chunking": ChunkingConfig,
    "alignment": AlignmentConfig,
    "filter": FilterConfig,
    "model": ModelConfig,
    "decode": DecodeConfig,
    "synth": SynthConfig,
    "train": TrainConfig,
}

# short flags kept for the chunker
ALIASES = {"unit": "chunking.unit", "window": "chunking.window", "stride": "chunking.stride"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    chunking: ChunkingConfig = field(default_factory=ChunkingConfig)
    alignment: AlignmentConfig = field(default_factory=AlignmentConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    model: ModelConfig = field(default_factory=lambda: ModelConfig(learning_rate=1e-3))
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_json(self) -> dict:
        out = {}
        for name in _SECTIONS:
            d = asdict(getattr(self, name))
            out[name] = {k: (sorted(v) if isinstance(v, frozenset) else list(v) if isinstance(v, tuple) else v)
                         for k, v in d.items()}
        return out

    @classmethod
    def from_json(cls, doc: dict, source: str = "config") -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError(f"{source}: expected a JSON object with sections {sorted(_SECTIONS)}")
        cfg = cls()
        for section, values in doc.items():
            if section not in _SECTIONS:
                raise ConfigError(f"{source}: unknown section '{section}'")
            if not isinstance(values, dict):
                raise ConfigError(f"{source}: section '{section}' must be an object")
            for key, value in values.items():
                cfg = cfg.with_value(f"{section}.{key}", value, source)
        return cfg

    def with_value(self, dotted: str, value: Any, source: str = "flag") -> "RunConfig":
        section, _, key = dotted.partition(".")
        if section not in _SECTIONS or not key:
            raise ConfigError(f"{source}: unknown option '{dotted}'")
        current = getattr(self, section)
        names = {f.name: f for f in fields(current)}
        if key not in names:
            raise ConfigError(f"{source}: unknown option '{dotted}'")
        hint = typing.get_type_hints(type(current))[key]
        try:
            coerced = _coerce(value, hint)
            return replace(self, **{section: replace(current, **{key: coerced})})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}: bad value for '{dotted}': {exc}") from None


def _coerce(value: Any, hint) -> Any:
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union:
        if value is None:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0])
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise TypeError(f"expected a list, got {value!r}")
        return tuple(_coerce(v, args[0]) for v in value)
    if origin is frozenset:
        if not isinstance(value, (list, tuple, set, frozenset)):
            raise TypeError(f"expected a list, got {value!r}")
        return frozenset(_coerce(v, args[0]) for v in value)
    if hint is bool:
        if not isinstance(value, bool):
            raise TypeError(f"expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeError(f"expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError(f"expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise TypeError(f"expected a string, got {value!r}")
        return value
    return value


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{p}: config file not found")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}:{exc.lineno}: malformed JSON ({exc.msg})") from None
    return RunConfig.from_json(doc, str(p))


def parse_value(text: str) -> Any:
    """CLI flag values are JSON where possible (numbers, lists, true/null), else plain strings."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: RunConfig, args: Sequence[str]) -> RunConfig:
    """Apply ``--section.key value`` / ``--section.key=value`` flags."""
    i = 0
    args = list(args)
    while i < len(args):
        arg = args[i]
        if not arg.startswith("--"):
            raise ConfigError(f"unexpected argument '{arg}'")
        name, eq, value = arg[2:].partition("=")
        if not eq:
            if i + 1 >= len(args):
                raise ConfigError(f"flag '--{name}' needs a value")
            value = args[i + 1]
            i += 1
        name = ALIASES.get(name, name)
        cfg = cfg.with_value(name, parse_value(value), f"flag '--{name}'")
        i += 1
    return cfg

