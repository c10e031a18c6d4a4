"""Attacks: model poisoning, data poisoning and passive data reconstruction.

``Attacker`` is the object the engine consults.  Its three ``is_*``
predicates decide at which stage it fires; the module-level functions do the
actual work and are pure given their inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from . import dlg
from .data import Dataset
from .errors import ConfigError, ContractError
from .model import ModelSpec, TrainConfig
from .params import ParamVector
from .rng import substream
from .updates import ClientUpdate, RoundState

ATTACK_CLASSES = {
    "byzantine": "model",
    "model_replacement": "model",
    "label_flip": "data",
    "dlg": "reconstruction",
}
BYZANTINE_MODES = ("zero", "random", "flip")

COMMON_KEYS = ("malicious_ratio", "malicious_ids", "redraw_each_round")
KIND_KEYS = {
    "byzantine": ("byzantine_mode", "random_sigma"),
    "label_flip": ("flip_pairs",),
    "model_replacement": ("scale_gamma", "flip_pairs", "backdoor_target"),
    "dlg": ("dlg_iters", "dlg_lr", "dlg_restarts", "dlg_num_samples"),
}
KIND_DEFAULTS: dict[str, dict[str, Any]] = {
    "byzantine": {"byzantine_mode": "random", "random_sigma": 1.0},
    "label_flip": {"flip_pairs": ()},
    "model_replacement": {"flip_pairs": ()},
    "dlg": {"dlg_iters": 1000, "dlg_lr": 0.1, "dlg_restarts": 5, "dlg_num_samples": 1},
}
_ALL_KIND_KEYS = sorted({k for keys in KIND_KEYS.values() for k in keys})


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    malicious_ratio: float = 0.1
    malicious_ids: Optional[tuple[int, ...]] = None
    redraw_each_round: bool = False
    byzantine_mode: Optional[str] = None
    random_sigma: Optional[float] = None
    flip_pairs: Optional[tuple[tuple[int, int], ...]] = None
    scale_gamma: Optional[float] = None
    backdoor_target: Optional[ParamVector] = None
    dlg_iters: Optional[int] = None
    dlg_lr: Optional[float] = None
    dlg_restarts: Optional[int] = None
    dlg_num_samples: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ATTACK_CLASSES:
            raise ConfigError(f"unknown attack_type {self.kind!r}; expected one of {sorted(ATTACK_CLASSES)}")
        allowed = set(KIND_KEYS[self.kind])
        for key in _ALL_KIND_KEYS:
            if key not in allowed and getattr(self, key) is not None:
                raise ConfigError(f"attack_args.{key} does not apply to attack_type {self.kind!r}")
        if not 0.0 <= self.malicious_ratio <= 1.0:
            raise ConfigError("attack_args.malicious_ratio must lie in [0, 1]")
        if self.malicious_ids is not None:
            object.__setattr__(self, "malicious_ids", tuple(int(i) for i in self.malicious_ids))
        if self.flip_pairs is not None:
            pairs = tuple((int(s), int(t)) for s, t in self.flip_pairs)
            for s, t in pairs:
                if s == t or s < 0 or t < 0:
                    raise ConfigError(f"attack_args.flip_pairs: invalid pair ({s}, {t})")
            if len({s for s, _ in pairs}) != len(pairs):
                raise ConfigError("attack_args.flip_pairs: a source class appears twice")
            object.__setattr__(self, "flip_pairs", pairs)
        if self.kind == "byzantine":
            if self.byzantine_mode not in BYZANTINE_MODES:
                raise ConfigError(f"attack_args.byzantine_mode must be one of {BYZANTINE_MODES}")
            if self.random_sigma is not None and self.random_sigma < 0:
                raise ConfigError("attack_args.random_sigma must be non-negative")
        if self.scale_gamma is not None and self.scale_gamma <= 0:
            raise ConfigError("attack_args.scale_gamma must be positive")
        if self.kind == "dlg":
            if self.dlg_iters < 1 or self.dlg_restarts < 1 or self.dlg_num_samples < 1:
                raise ConfigError("attack_args.dlg_iters, dlg_restarts and dlg_num_samples must be positive")
            if not self.dlg_lr > 0:
                raise ConfigError("attack_args.dlg_lr must be positive")

    @classmethod
    def from_args(cls, kind: str, args: Mapping[str, Any] | None = None) -> AttackSpec:
        """Build a spec from a config ``attack_args`` mapping, rejecting foreign keys."""
        if kind not in ATTACK_CLASSES:
            raise ConfigError(f"unknown attack_type {kind!r}; expected one of {sorted(ATTACK_CLASSES)}")
        args = dict(args or {})
        allowed = set(COMMON_KEYS) | set(KIND_KEYS[kind]) - {"backdoor_target"}
        unknown = sorted(set(args) - allowed)
        if unknown:
            raise ConfigError(f"attack_args: unknown key(s) {unknown} for attack_type {kind!r}; "
                              f"allowed: {sorted(allowed)}")
        merged = {**KIND_DEFAULTS.get(kind, {}), **args}
        if "flip_pairs" in merged:
            merged["flip_pairs"] = tuple(tuple(p) for p in merged["flip_pairs"])
        if merged.get("malicious_ids") is not None:
            merged["malicious_ids"] = tuple(merged["malicious_ids"])
        return cls(kind=kind, **merged)

    def check_classes(self, num_classes: int) -> None:
        for s, t in self.flip_pairs or ():
            if s >= num_classes or t >= num_classes:
                raise ConfigError(f"attack_args.flip_pairs: ({s}, {t}) outside [0, {num_classes})")


def is_data_poisoning_attack(spec: AttackSpec | None) -> bool:
    return spec is not None and ATTACK_CLASSES[spec.kind] == "data"


def is_model_poisoning_attack(spec: AttackSpec | None) -> bool:
    return spec is not None and ATTACK_CLASSES[spec.kind] == "model"


def is_data_reconstruction_attack(spec: AttackSpec | None) -> bool:
    return spec is not None and ATTACK_CLASSES[spec.kind] == "reconstruction"


def choose_malicious(num_clients: int, ratio: float, rng: np.random.Generator) -> frozenset[int]:
    """floor(ratio * n) client ids, at least one whenever ratio > 0."""
    k = math.floor(ratio * num_clients)
    if ratio > 0:
        k = max(k, 1)
    k = min(k, num_clients)
    return frozenset(int(i) for i in rng.choice(num_clients, size=k, replace=False))


def poison_data(data: Dataset, spec: AttackSpec) -> Dataset:
    """Relabel every sample of each source class to its paired target class."""
    pairs = spec.flip_pairs or ()
    spec.check_classes(data.num_classes)
    if not pairs:
        return data
    labels = data.labels.copy()
    for s, t in pairs:
        labels[data.labels == s] = t
    return data.with_labels(labels)


def attack_model(updates: Sequence[ClientUpdate], aux: RoundState, spec: AttackSpec,
                 malicious: frozenset[int] | set[int]) -> list[ClientUpdate]:
    """Replace the models of malicious clients; every other update passes through untouched.

    zero     all parameters set to 0
    random   each parameter an independent N(0, random_sigma^2) draw
    flip     w' = w_g + (w_g - w_l)
    model_replacement
             w' = w_g + gamma * (w_backdoor - w_g); gamma defaults to
             total samples / malicious samples, w_backdoor to the client's own
             (backdoor-trained) model
    """
    if not is_model_poisoning_attack(spec):
        raise ContractError(f"attack_type {spec.kind!r} does not poison models")
    if not updates:
        raise ContractError("attack_model needs at least one update")
    hit = [u for u in updates if u.client_id in malicious]
    if not hit:
        return list(updates)

    w_g = aux.global_params
    mode = spec.byzantine_mode if spec.kind == "byzantine" else spec.kind
    if mode in ("flip", "model_replacement") and w_g is None:
        raise ContractError(f"{mode} attack needs the global model, which is absent")

    gamma = spec.scale_gamma
    if mode == "model_replacement" and gamma is None:
        bad = sum(u.sample_count for u in hit)
        gamma = sum(u.sample_count for u in updates) / bad if bad else 1.0

    out = []
    for u in updates:
        if u.client_id not in malicious:
            out.append(u)
            continue
        w = u.params
        if mode == "zero":
            new = np.zeros_like(w.values)
        elif mode == "random":
            rng = substream(aux.seed, "byzantine_random", aux.round_index, u.client_id)
            new = rng.normal(0.0, spec.random_sigma, size=w.values.shape)
        elif mode == "flip":
            w.check_compatible(w_g)
            new = w_g.values + (w_g.values - w.values)
        else:
            target = spec.backdoor_target if spec.backdoor_target is not None else w
            target.check_compatible(w_g)
            new = w_g.values + gamma * (target.values - w_g.values)
        out.append(u.with_params(w.with_values(new)))
    return out


def reconstruct_data(model_spec: ModelSpec, params: ParamVector, spec: AttackSpec, *,
                     gradient: ParamVector | None = None,
                     model_pair: tuple[ParamVector, ParamVector] | None = None,
                     local_lr: float | None = None, local_steps: int | None = None,
                     seed: int = 0) -> dlg.Reconstruction:
    """Gradient-matching reconstruction from a gradient or a (before, after) model pair.

    ``params`` is the model at which the gradient was taken.  A model pair
    is turned into a gradient with the one-step approximation
    ``(before - after) / (local_lr * local_steps)``.
    """
    if not is_data_reconstruction_attack(spec):
        raise ContractError(f"attack_type {spec.kind!r} does not reconstruct data")
    if (gradient is None) == (model_pair is None):
        raise ContractError("give exactly one of gradient or model_pair")
    if gradient is None:
        if local_lr is None or local_steps is None:
            raise ContractError("a model pair needs local_lr and local_steps")
        gradient = dlg.gradient_from_models(model_pair[0], model_pair[1], local_lr, local_steps)
    return dlg.reconstruct(model_spec, params, gradient, num_samples=spec.dlg_num_samples,
                           iters=spec.dlg_iters, lr=spec.dlg_lr, restarts=spec.dlg_restarts,
                           seed=seed)


class Attacker:
    """The run's single attack instance.

    Built disabled (``spec=None``) it answers False to every predicate.
    Malicious clients are drawn once from the ``malicious`` substream unless
    the AttackSpec lists them or asks for a fresh draw every round.
    """

    def __init__(self, spec: AttackSpec | None, num_clients: int, seed: int = 0):
        self.spec = spec
        self.num_clients = num_clients
        self.seed = seed
        self._fixed: frozenset[int] = frozenset()
        if spec is not None:
            if spec.malicious_ids is not None:
                bad = [i for i in spec.malicious_ids if not 0 <= i < num_clients]
                if bad:
                    raise ConfigError(f"attack_args.malicious_ids {bad} outside [0, {num_clients})")
                self._fixed = frozenset(spec.malicious_ids)
            elif not spec.redraw_each_round:
                self._fixed = choose_malicious(num_clients, spec.malicious_ratio,
                                               substream(seed, "malicious"))

    @property
    def enabled(self) -> bool:
        return self.spec is not None

    def is_data_poisoning_attack(self) -> bool:
        return is_data_poisoning_attack(self.spec)

    def is_model_poisoning_attack(self) -> bool:
        return is_model_poisoning_attack(self.spec)

    def is_data_reconstruction_attack(self) -> bool:
        return is_data_reconstruction_attack(self.spec)

    def needs_backdoor_data(self) -> bool:
        """Model replacement trains its backdoor model on relabelled data."""
        return (self.spec is not None and self.spec.kind == "model_replacement"
                and self.spec.backdoor_target is None)

    def malicious_clients(self, round_index: int) -> frozenset[int]:
        if self.spec is None:
            return frozenset()
        if self.spec.redraw_each_round and self.spec.malicious_ids is None:
            return choose_malicious(self.num_clients, self.spec.malicious_ratio,
                                    substream(self.seed, "malicious", round_index))
        return self._fixed

    def poison_data(self, data: Dataset) -> Dataset:
        return poison_data(data, self.spec)

    def attack_model(self, updates: Sequence[ClientUpdate], aux: RoundState) -> list[ClientUpdate]:
        return attack_model(updates, aux, self.spec, self.malicious_clients(aux.round_index))

    def reconstruct_data(self, model_spec: ModelSpec, aux: RoundState, update: ClientUpdate,
                         cfg: TrainConfig) -> dlg.Reconstruction:
        """Server-side leakage of one client's data from its submitted model."""
        steps = cfg.steps_per_run(update.sample_count) if update.sample_count else 1
        return reconstruct_data(model_spec, aux.global_params, self.spec,
                                model_pair=(aux.global_params, update.params),
                                local_lr=cfg.learning_rate, local_steps=steps,
                                seed=substream(aux.seed, "dlg", aux.round_index,
                                               update.client_id).integers(2**32))
