"""The federated round loop and its attack/defense hook points.

One round runs these stages in order:

1. per selected client: data poisoning (if the attacker asks for it), then
   local training, producing a ClientUpdate
2. model poisoning over the whole update list
3. before-aggregation defense
4. aggregation: on-aggregation defense if any, else the server optimizer
5. after-aggregation defense on the new global model
6. passive data reconstruction (reads models, never writes them)
7. evaluation and a MetricsRecord
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .aggregation import fedavg_aggregate
from .attacks import Attacker
from .data import Dataset
from .defenses import Defender
from .errors import ConfigError, ContractError, EmptyAggregationError, SingletonError, SkipClient
from .metrics import MetricsRecord
from .model import ModelSpec, TrainConfig, evaluate, local_train_with_loss
from .params import ParamVector
from .rng import substream
from .updates import ClientUpdate, RoundState, sorted_by_client

__all__ = [
    "Client", "HookRegistry", "OptimizerSpec", "ServerOptimizer", "RoundResult",
    "fedavg_aggregate", "fedopt_step", "select_clients", "run_round",
]


@dataclass(frozen=True)
class Client:
    client_id: int
    spec: ModelSpec
    data: Dataset
    cfg: TrainConfig


@dataclass(frozen=True)
class OptimizerSpec:
    """Server optimizer.  ``fedopt`` applies SGD (with momentum) or Adam to the
    pseudo-gradient ``fedavg(updates) - global``."""

    kind: str = "fedavg"
    server_opt: str = "sgd"
    server_lr: float = 1.0
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-3

    def __post_init__(self):
        if self.kind not in ("fedavg", "fedopt"):
            raise ConfigError(f"optimizer.kind must be fedavg or fedopt, got {self.kind!r}")
        if self.server_opt not in ("sgd", "adam"):
            raise ConfigError(f"optimizer.server_opt must be sgd or adam, got {self.server_opt!r}")
        if self.server_lr < 0:
            raise ConfigError("optimizer.server_lr must be non-negative")
        if not 0 <= self.momentum < 1 or not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ConfigError("optimizer momentum/beta1/beta2 must lie in [0, 1)")
        if not self.eps > 0:
            raise ConfigError("optimizer.eps must be positive")


class ServerOptimizer:
    """Aggregates updates into the next global model; keeps FedOpt moments across rounds."""

    def __init__(self, spec: OptimizerSpec | None = None):
        self.spec = spec or OptimizerSpec()
        self.m: Optional[np.ndarray] = None
        self.v: Optional[np.ndarray] = None

    def aggregate(self, updates: Sequence[ClientUpdate], global_params: ParamVector) -> ParamVector:
        if self.spec.kind == "fedavg":
            return fedavg_aggregate(updates)
        return fedopt_step(global_params, updates, self)


def fedopt_step(global_params: ParamVector, updates: Sequence[ClientUpdate],
                opt: ServerOptimizer) -> ParamVector:
    """global + server step on delta = fedavg(updates) - global.

    sgd:  m = momentum * m + delta;  x += lr * m
    adam: m = b1 m + (1 - b1) delta;  v = b2 v + (1 - b2) delta^2;
          x += lr * m / (sqrt(v) + eps)
    """
    if global_params is None:
        raise ContractError("fedopt needs the current global model")
    spec = opt.spec
    avg = fedavg_aggregate(updates)
    global_params.check_compatible(avg)
    delta = avg.values - global_params.values
    if opt.m is None:
        opt.m = np.zeros_like(delta)
        opt.v = np.zeros_like(delta)
    if spec.server_opt == "sgd":
        opt.m = spec.momentum * opt.m + delta
        step = spec.server_lr * opt.m
    else:
        opt.m = spec.beta1 * opt.m + (1 - spec.beta1) * delta
        opt.v = spec.beta2 * opt.v + (1 - spec.beta2) * delta * delta
        step = spec.server_lr * opt.m / (np.sqrt(opt.v) + spec.eps)
    return global_params.with_values(global_params.values + step)


def select_clients(round_index: int, num_total: int, num_per_round: int, seed: int) -> list[int]:
    """Uniform sample without replacement, sorted; all clients when per-round equals total."""
    if not 1 <= num_per_round <= num_total:
        raise ConfigError(f"clients_per_round must lie in [1, {num_total}]")
    if num_per_round == num_total:
        return list(range(num_total))
    rng = substream(seed, "select", round_index)
    return sorted(int(i) for i in rng.choice(num_total, size=num_per_round, replace=False))


class HookRegistry:
    """Holds at most one attacker and one defender for a run."""

    def __init__(self, attacker: Attacker | None = None, defender: Defender | None = None):
        self.attacker: Attacker | None = None
        self.defender: Defender | None = None
        if attacker is not None:
            self.register_attacker(attacker)
        if defender is not None:
            self.register_defender(defender)

    def register_attacker(self, attacker: Attacker) -> None:
        if self.attacker is not None:
            raise SingletonError("an attacker is already registered for this run")
        self.attacker = attacker

    def register_defender(self, defender: Defender) -> None:
        if self.defender is not None:
            raise SingletonError("a defender is already registered for this run")
        self.defender = defender

    def _att(self, pred: str) -> bool:
        return self.attacker is not None and getattr(self.attacker, pred)()

    def _def(self, pred: str) -> bool:
        return self.defender is not None and getattr(self.defender, pred)()


@dataclass
class RoundResult:
    state: RoundState
    metrics: MetricsRecord
    updates: list[ClientUpdate]
    reconstructions: dict = field(default_factory=dict)


def _train_one(client: Client, data: Dataset, global_params: ParamVector, seed: int):
    cfg = replace(client.cfg, seed=seed)
    try:
        params, loss = local_train_with_loss(client.spec, global_params, data, cfg)
    except SkipClient:
        return None
    return ClientUpdate(client.client_id, len(data), params), loss


def run_round(state: RoundState, clients: Sequence[Client], registry: HookRegistry,
              optimizer: ServerOptimizer, test_data: Dataset, *,
              trace: list[str] | None = None, workers: int = 1) -> RoundResult:
    """Run one round; ``clients`` are the ones selected for it.

    ``trace``, when given, receives the name of every stage as it fires.
    """
    t0 = time.perf_counter()
    if not clients:
        raise ContractError("a round needs at least one client")
    log = trace.append if trace is not None else (lambda _: None)
    clients = sorted(clients, key=lambda c: c.client_id)
    spec = clients[0].spec
    attacker = registry.attacker
    malicious = attacker.malicious_clients(state.round_index) if attacker else frozenset()

    # (1) data views are prepared sequentially; only training may run in threads
    views = []
    poisoned = []
    for c in clients:
        data = c.data
        if c.client_id in malicious and (registry._att("is_data_poisoning_attack")
                                         or (attacker and attacker.needs_backdoor_data())):
            data = attacker.poison_data(data)
            poisoned.append(c.client_id)
            log("data-poison")
        views.append(data)
    seeds = [state.streams.seed_for("train", state.round_index, c.client_id) for c in clients]
    jobs = list(zip(clients, views, seeds))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda j: _train_one(j[0], j[1], state.global_params, j[2]), jobs))
    else:
        results = [_train_one(c, d, state.global_params, s) for c, d, s in jobs]
    updates, losses = [], []
    for r in results:
        log("local-train")
        if r is not None:
            updates.append(r[0])
            losses.append(r[1])
    if not updates:
        raise ContractError("every selected client was skipped (no data)")
    submitted = list(updates)

    # (2) model poisoning
    if registry._att("is_model_poisoning_attack"):
        log("model-poison")
        updates = attacker.attack_model(updates, state)
        poisoned = sorted(set(poisoned) | {u.client_id for u in updates if u.client_id in malicious})

    # (3) before-aggregation defense
    selected = None
    defender = registry.defender
    if registry._def("is_defense_before_aggregation"):
        log("defense-before")
        updates = defender.defend_before_aggregation(updates, state)
        if not updates:
            raise EmptyAggregationError(defender.name)
        selected = sorted(u.client_id for u in updates)

    # (4) aggregation
    if registry._def("is_defense_on_aggregation"):
        log("defense-on")
        new_global = defender.defend_on_aggregation(updates, state)
    else:
        log("aggregate")
        new_global = optimizer.aggregate(updates, state.global_params)

    # (5) after-aggregation defense
    if registry._def("is_defense_after_aggregation"):
        log("defense-after")
        new_global = defender.defend_after_aggregation(new_global, state)

    # (6) passive reconstruction: observes submitted models only
    recon = {}
    if registry._att("is_data_reconstruction_attack"):
        log("reconstruct")
        by_id = {c.client_id: c for c in clients}
        for u in submitted:
            if u.client_id in malicious:
                recon[u.client_id] = attacker.reconstruct_data(spec, state, u, by_id[u.client_id].cfg)

    # (7) evaluation
    acc, loss = evaluate(spec, new_global, test_data)
    record = MetricsRecord(
        round=state.round_index,
        test_accuracy=acc,
        test_loss=loss,
        train_loss_mean=float(np.mean(losses)),
        num_updates_aggregated=len(updates),
        wall_time_ms=int((time.perf_counter() - t0) * 1000),
        defense_selected_ids=selected,
        attack_poisoned_ids=poisoned if attacker and attacker.enabled else None,
        reconstruction_match_loss=(min(r.match_loss for r in recon.values()) if recon else None),
    )
    return RoundResult(state.advance(new_global), record, submitted, recon)
