"""Run configuration: one JSON document holding every module config.

Loading merges a document over the defaults and rejects unknown keys at
every nesting level.  The config hash is the first 12 hex digits of the
SHA-256 of the canonical (sorted-key, compact) JSON of the merged config.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .eval_harness import NaoExperimentConfig
from .forecaster import CorpusConfig, ForecasterConfig

SEED_ENV = "CF_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    n_seeds: int = 5  # seeds per condition in sweeps and ablations
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    forecaster: ForecasterConfig = field(default_factory=ForecasterConfig)
    nao: NaoExperimentConfig = field(default_factory=NaoExperimentConfig)
    # fine-grained labels used for the node-feature ablation corpus
    feature_ablation_variants: int = 3

    def to_json(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _coerce(tp, value, where: str):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        return from_dict(tp, value, where)
    if origin is typing.Union or type(tp).__name__ == "UnionType":
        args = typing.get_args(tp)
        if value is None and type(None) in args:
            return None
        for a in args:
            if a is type(None):
                continue
            try:
                return _coerce(a, value, where)
            except ConfigError:
                continue
        raise ConfigError(f"{where}: cannot read {value!r}")
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        args = typing.get_args(tp)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], v, where) for v in value)
        if args and len(args) != len(value):
            raise ConfigError(f"{where}: expected {len(args)} items")
        return tuple(_coerce(a, v, where) for a, v in zip(args, value)) if args else tuple(value)
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    return value  # dicts and free-form entries


def from_dict(cls, doc, where: str = "config"):
    """Build dataclass ``cls`` from ``doc`` over its defaults."""
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key {unknown[0]!r}")
    kwargs = {k: _coerce(hints[k], v, f"{where}.{k}") for k, v in doc.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def load_config(path=None, seed: int | None = None, env=None) -> RunConfig:
    """Defaults, then the JSON file, then ``seed``, then ``$CF_SEED``."""
    cfg = RunConfig()
    if path is not None:
        p = Path(path)
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
        cfg = from_dict(RunConfig, doc)
    if seed is not None:
        cfg.seed = int(seed)
    env = {} if env is None else env
    if env.get(SEED_ENV, "") != "":
        try:
            cfg.seed = int(env[SEED_ENV])
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from exc
    if not 0 <= cfg.seed < 2 ** 64:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    return cfg


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_json(), indent=2, sort_keys=True) + "\n"
