"""Plain-text ``key = value`` config files for training and evaluation.

Format::

    # comments start with '#'; blank lines are ignored
    preset = desk            # optional, applied before the other keys
    train_batch_size = 32
    overlong_enabled = false

Keys are the field names of :class:`~justrl.trainer.TrainConfig` (or
:class:`~justrl.evaluation.EvalConfig`). Booleans accept true/false, yes/no,
on/off and 1/0. Every error message names the file and line.
"""

from __future__ import annotations

import dataclasses
import re
from pathlib import Path
from typing import Any, TypeVar

from .errors import ConfigError
from .evaluation import EvalConfig
from .trainer import PRESETS, TrainConfig

T = TypeVar("T")

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}
_LINE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*)$")


def _coerce(raw: str, kind: type, key: str, path: str, line: int) -> Any:
    try:
        if kind is bool:
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}", path=path, line=line) from None


def parse_pairs(text: str, path: str = "<config>") -> dict[str, tuple[str, int]]:
    pairs: dict[str, tuple[str, int]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        m = _LINE.match(body)
        if not m:
            raise ConfigError(f"expected 'key = value', got {body!r}", path=path, line=lineno)
        key, value = m.group(1), m.group(2).strip()
        if key in pairs:
            raise ConfigError(f"duplicate key {key!r} (first set on line {pairs[key][1]})", path=path, line=lineno)
        pairs[key] = (value, lineno)
    return pairs


def _build(cls: type[T], pairs: dict[str, tuple[str, int]], path: str, base: dict | None = None) -> T:
    types = {f.name: f.type for f in dataclasses.fields(cls)}
    kinds = {"bool": bool, "int": int, "float": float, "str": str}
    values = dict(base or {})
    for key, (raw, line) in pairs.items():
        if key not in types:
            raise ConfigError(f"unknown key {key!r}", path=path, line=line)
        values[key] = _coerce(raw, kinds.get(str(types[key]), str), key, path, line)
    try:
        return cls(**values)
    except ConfigError as exc:
        msg = str(exc)
        # anchor to the line of the first key the message names
        named = [(m.start(), key) for key in pairs if (m := re.search(rf"\b{key}\b", msg))]
        if named:
            raise ConfigError(msg, path=path, line=pairs[min(named)[1]][1]) from None
        raise ConfigError(msg, path=path) from None


def parse_train_config(text: str, path: str = "<config>") -> TrainConfig:
    pairs = parse_pairs(text, path)
    base: dict = {}
    if "preset" in pairs:
        name, line = pairs.pop("preset")
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}", path=path, line=line)
        base = dict(PRESETS[name])
    return _build(TrainConfig, pairs, path, base)


def parse_eval_config(text: str, path: str = "<config>") -> EvalConfig:
    return _build(EvalConfig, parse_pairs(text, path), path)


def load_train_config(path: str | Path) -> TrainConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config ({exc.strerror or exc})", path=str(path)) from exc
    return parse_train_config(text, str(path))


def load_eval_config(path: str | Path) -> EvalConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config ({exc.strerror or exc})", path=str(path)) from exc
    return parse_eval_config(text, str(path))


def dump_train_config(cfg: TrainConfig) -> str:
    lines = []
    for key, value in cfg.to_dict().items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
