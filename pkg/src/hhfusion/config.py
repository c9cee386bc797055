"""Run configuration documents (JSON) with strict key checking."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

from .encoder import EncoderConfig
from .errors import ConfigError
from .pipeline.corpus import VOCAB, CorpusSpec
from .pipeline.training import TrainConfig


@dataclass
class AdapterConfig:
    d_inner: Optional[int] = None
    activation: str = "gelu"


@dataclass
class FusionRunConfig:
    variant: str = "Fusion-W_C"
    c_couples: int = 8
    data_fraction: float = 0.6
    folds: List[int] = field(default_factory=lambda: [0])
    target_subset: int = 0


def _default_pretrain() -> TrainConfig:
    return TrainConfig(max_epochs=60, patience=5, lambda2=0.0)


@dataclass
class RunConfig:
    experiment: str = "default"
    seed: int = 0
    out: str = "runs"
    model: EncoderConfig = field(default_factory=lambda: EncoderConfig(vocab_in=len(VOCAB), vocab_out=len(VOCAB)))
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    pretrain: TrainConfig = field(default_factory=_default_pretrain)
    train: TrainConfig = field(default_factory=TrainConfig)
    fusion: FusionRunConfig = field(default_factory=FusionRunConfig)

    def __post_init__(self):
        if self.model.vocab_in < len(VOCAB) or self.model.vocab_out < len(VOCAB):
            raise ConfigError(f"model vocabularies must cover the {len(VOCAB)} corpus words")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def digest(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    def replace(self, **sections) -> "RunConfig":
        return from_dict(_merge(self.to_dict(), sections))


def _merge(base: dict, updates: dict) -> dict:
    out = dict(base)
    for k, v in updates.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _check_scalar(value, tp, path):
    if tp is bool:
        ok = isinstance(value, bool)
    elif tp is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif tp is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif tp is str:
        ok = isinstance(value, str)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{path}: expected {tp.__name__}, got {type(value).__name__} ({value!r})")
    return value


def _coerce(value, tp, path):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], path)
    if origin in (list, List):
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {type(value).__name__}")
        (item,) = typing.get_args(tp)
        return [_coerce(v, item, f"{path}[{i}]") for i, v in enumerate(value)]
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    return _check_scalar(value, tp, path)


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = [f.name for f in dataclasses.fields(cls)]
    unknown = sorted(set(data) - set(names))
    if unknown:
        where = path or "config"
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {k: _coerce(v, hints[k], f"{path}.{k}" if path else k) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None


def from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "")


def loads(text: str, source: str = "<config>") -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return from_dict(data)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return loads(text, str(path))
