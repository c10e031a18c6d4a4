"""Build everything a config describes and run it round by round."""

from __future__ import annotations

import logging
from pathlib import Path

from .attacks import Attacker
from .config import ExperimentConfig, dump_config
from .data import load_csv, make_synthetic, partition_dirichlet, train_test_split
from .defenses import Defender
from .engine import Client, HookRegistry, ServerOptimizer, run_round, select_clients
from .metrics import MetricsRecord, write_metrics
from .model import init_params
from .rng import RngStreams
from .updates import RoundState

logger = logging.getLogger(__name__)


class RunError(RuntimeError):
    """A failure inside a round, tagged with the round index."""

    def __init__(self, round_index: int, cause: Exception):
        super().__init__(f"round {round_index}: {type(cause).__name__}: {cause}")
        self.round_index = round_index


def build_data(cfg: ExperimentConfig, streams: RngStreams):
    d = cfg.data
    if d.source == "csv":
        train = load_csv(d.path, d.num_classes)
        test = load_csv(d.test_path, d.num_classes)
    else:
        n_train = cfg.common.clients_total * d.samples_per_client
        full = make_synthetic(d.num_classes, d.dim, n_train + d.test_samples,
                              streams.seed_for("data"), class_sep=d.class_sep, shift=d.feature_shift)
        train, test = train_test_split(full, d.test_samples)
    parts = partition_dirichlet(train, cfg.common.clients_total, d.dirichlet_alpha,
                                streams.seed_for("partition"))
    return parts, test


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None,
                   trace: list[str] | None = None) -> list[MetricsRecord]:
    """Run ``cfg.common.rounds`` rounds and return one record per round.

    Outputs go to ``out_dir`` (or ``cfg.output.dir``) when either is set.
    """
    streams = RngStreams(cfg.common.seed)
    spec = cfg.model_spec()
    train_cfg = cfg.train_config()
    parts, test = build_data(cfg, streams)
    clients = [Client(i, spec, data, train_cfg) for i, data in enumerate(parts)]

    attack = cfg.attack_spec()
    defense = cfg.defense_spec()
    registry = HookRegistry(
        Attacker(attack, cfg.common.clients_total, cfg.common.seed) if attack else None,
        Defender(defense) if defense else None,
    )
    optimizer = ServerOptimizer(cfg.optimizer)
    state = RoundState(0, init_params(spec, streams.seed_for("init")), cfg.common.seed)

    records = []
    for r in range(cfg.common.rounds):
        ids = select_clients(r, cfg.common.clients_total, cfg.common.clients_per_round, cfg.common.seed)
        try:
            result = run_round(state, [clients[i] for i in ids], registry, optimizer, test,
                               trace=trace, workers=cfg.common.workers)
        except Exception as exc:
            raise RunError(r, exc) from exc
        state = result.state
        records.append(result.metrics)
        logger.debug("round %d acc=%.4f loss=%.4f", r, result.metrics.test_accuracy, result.metrics.test_loss)

    out = out_dir if out_dir is not None else cfg.output.dir
    if out is not None:
        out = Path(out)
        write_metrics(records, out, cfg.to_dict(), cfg.output.formats)
        (out / "config.yaml").write_text(dump_config(cfg))
        if registry.defender is not None and registry.defender.is_stateful():
            registry.defender.state.save(out / "defender_state.bin")
    return records
