"""Strict experiment configuration.

The YAML file mirrors the dataclasses below section by section.  Every key
is checked: an unknown key, a wrong type or a violated constraint raises
ConfigError naming the dotted key.
"""

from __future__ import annotations

import copy
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Optional

import yaml

from .attacks import AttackSpec
from .defenses import DefenseSpec
from .engine import OptimizerSpec
from .errors import ConfigError
from .model import ModelSpec, TrainConfig

SEED_ENV = "FEDSIM_SEED"


@dataclass(frozen=True)
class CommonConfig:
    seed: int = 0
    rounds: int = 50
    clients_total: int = 10
    clients_per_round: int = 10
    workers: int = 1


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"
    num_classes: int = 10
    dim: int = 30
    samples_per_client: int = 100
    test_samples: int = 1000
    dirichlet_alpha: float = 0.5
    class_sep: float = 1.5
    feature_shift: float = 5.0
    path: Optional[str] = None
    test_path: Optional[str] = None


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "logreg"
    hidden_dims: list[int] = field(default_factory=list)


@dataclass(frozen=True)
class LocalConfig:
    local_epochs: int = 1
    batch_size: int = 100
    learning_rate: float = 0.05


@dataclass(frozen=True)
class SecurityConfig:
    enable_attack: bool = False
    attack_type: Optional[str] = None
    attack_args: dict = field(default_factory=dict)
    enable_defense: bool = False
    defense_type: Optional[str] = None
    defense_args: dict = field(default_factory=dict)


@dataclass(frozen=True)
class OutputConfig:
    dir: Optional[str] = None
    formats: list[str] = field(default_factory=lambda: ["csv", "json"])


_SECTIONS = {
    "common": CommonConfig,
    "data": DataConfig,
    "model": ModelConfig,
    "local": LocalConfig,
    "optimizer": OptimizerSpec,
    "security": SecurityConfig,
    "output": OutputConfig,
}


@dataclass(frozen=True)
class ExperimentConfig:
    common: CommonConfig = field(default_factory=CommonConfig)
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    local: LocalConfig = field(default_factory=LocalConfig)
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    security: SecurityConfig = field(default_factory=SecurityConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    name: str = "custom"

    def to_dict(self) -> dict[str, Any]:
        return copy.deepcopy(asdict(self))

    def model_spec(self) -> ModelSpec:
        return ModelSpec(self.model.kind, self.data.dim, self.data.num_classes, tuple(self.model.hidden_dims))

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.local.local_epochs, self.local.batch_size, self.local.learning_rate)

    def attack_spec(self) -> AttackSpec | None:
        s = self.security
        return AttackSpec.from_args(s.attack_type, s.attack_args) if s.enable_attack else None

    def defense_spec(self) -> DefenseSpec | None:
        s = self.security
        return DefenseSpec.from_args(s.defense_type, s.defense_args) if s.enable_defense else None


# --- parsing ----------------------------------------------------------------

def _coerce(value: Any, typ: str, key: str) -> Any:
    optional = typ.startswith("Optional[")
    if optional:
        if value is None:
            return None
        typ = typ[len("Optional["):-1]
    if typ == "bool":
        if isinstance(value, bool):
            return value
    elif typ == "int":
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif typ == "float":
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if isinstance(value, str):
            try:
                return float(value)  # yaml reads "1e-3" as a string
            except ValueError:
                pass
    elif typ == "str":
        if isinstance(value, str):
            return value
    elif typ == "dict":
        if value is None:
            return {}
        if isinstance(value, Mapping):
            return dict(value)
    elif typ.startswith("list["):
        inner = typ[5:-1]
        if isinstance(value, (list, tuple)):
            return [_coerce(v, inner, f"{key}[{i}]") for i, v in enumerate(value)]
    else:
        raise AssertionError(f"unhandled config type {typ}")
    raise ConfigError(f"{key}: expected {'optional ' if optional else ''}{typ}, got {value!r}")


def _section(cls, data: Any, prefix: str):
    if data is None:
        data = {}
    if not isinstance(data, Mapping):
        raise ConfigError(f"{prefix}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key {prefix}.{unknown[0]} (allowed: {sorted(known)})")
    kwargs = {name: _coerce(data[name], str(known[name].type), f"{prefix}.{name}")
              for name in data}
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"{prefix}: {exc}") from None


def config_from_dict(raw: Mapping[str, Any]) -> ExperimentConfig:
    if not isinstance(raw, Mapping):
        raise ConfigError("config root must be a mapping")
    allowed = set(_SECTIONS) | {"name"}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]} (allowed: {sorted(allowed)})")
    sections = {name: _section(cls, raw.get(name), name) for name, cls in _SECTIONS.items()}
    name = raw.get("name", "custom")
    if not isinstance(name, str):
        raise ConfigError("name: expected str")
    cfg = ExperimentConfig(**sections, name=name)
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    c, d, s = cfg.common, cfg.data, cfg.security
    if c.seed < 0:
        raise ConfigError("common.seed must be non-negative")
    if c.rounds < 1:
        raise ConfigError("common.rounds must be positive")
    if c.clients_total < 1:
        raise ConfigError("common.clients_total must be positive")
    if not 1 <= c.clients_per_round <= c.clients_total:
        raise ConfigError("common.clients_per_round must lie in [1, common.clients_total]")
    if c.workers < 1:
        raise ConfigError("common.workers must be positive")

    if d.source not in ("synthetic", "csv"):
        raise ConfigError(f"data.source must be synthetic or csv, got {d.source!r}")
    if d.source == "csv" and (not d.path or not d.test_path):
        raise ConfigError("data.path and data.test_path are required when data.source is csv")
    if d.samples_per_client < 1 or d.test_samples < 1:
        raise ConfigError("data.samples_per_client and data.test_samples must be positive")
    if not d.dirichlet_alpha > 0:
        raise ConfigError("data.dirichlet_alpha must be positive")
    if not d.class_sep > 0:
        raise ConfigError("data.class_sep must be positive")
    try:
        cfg.model_spec()
        cfg.train_config()
    except ConfigError as exc:
        raise ConfigError(f"model/local: {exc}") from None

    bad = sorted(set(cfg.output.formats) - {"csv", "json"})
    if bad:
        raise ConfigError(f"output.formats: unknown format {bad[0]!r} (allowed: csv, json)")

    if s.enable_attack:
        if not s.attack_type:
            raise ConfigError("security.attack_type is required when security.enable_attack is true")
        spec = cfg.attack_spec()
        spec.check_classes(d.num_classes)
        if spec.malicious_ids is not None:
            outside = [i for i in spec.malicious_ids if not 0 <= i < c.clients_total]
            if outside:
                raise ConfigError(f"attack_args.malicious_ids {outside} outside [0, {c.clients_total})")
    if s.enable_defense:
        if not s.defense_type:
            raise ConfigError("security.defense_type is required when security.enable_defense is true")
        spec = cfg.defense_spec()
        spec.check_round_size(c.clients_per_round)


def load_config(path: str | Path, env: Mapping[str, str] | None = None) -> ExperimentConfig:
    """Read, validate and fill defaults.  ``FEDSIM_SEED`` in ``env`` overrides common.seed."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    cfg = config_from_dict(raw or {})
    return apply_env(cfg, os.environ if env is None else env)


def apply_env(cfg: ExperimentConfig, env: Mapping[str, str]) -> ExperimentConfig:
    value = env.get(SEED_ENV)
    if value is None or value == "":
        return cfg
    try:
        seed = int(value)
    except ValueError:
        raise ConfigError(f"{SEED_ENV}={value!r} is not an integer") from None
    return apply_overrides(cfg, [f"common.seed={seed}"])


def apply_overrides(cfg: ExperimentConfig, overrides: list[str]) -> ExperimentConfig:
    """Apply ``dotted.key=value`` overrides; values are parsed as YAML scalars."""
    raw = cfg.to_dict()
    for item in overrides:
        key, sep, text = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        try:
            value = yaml.safe_load(text)
        except yaml.YAMLError:
            raise ConfigError(f"override {item!r}: value is not valid YAML") from None
        parts = key.split(".")
        node = raw
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                if p in node and node[p] is None:
                    node[p] = {}
                else:
                    raise ConfigError(f"override {item!r}: unknown key {key}")
            node = node[p]
        if len(parts) == 1 and parts[0] not in raw:
            raise ConfigError(f"override {item!r}: unknown key {key}")
        node[parts[-1]] = value
    return config_from_dict(raw)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
