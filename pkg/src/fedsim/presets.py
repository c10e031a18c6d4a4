"""Named scenarios for the attack, defense and attack-versus-defense comparisons.

Every preset starts from the same base (10 clients, 10% malicious when an
attack is on, logistic regression on non-IID synthetic clusters) and differs
only in its ``security`` block.
"""

from __future__ import annotations

from .config import ExperimentConfig, config_from_dict
from .defenses import DEFENSE_KINDS
from .errors import ConfigError

BASE: dict = {
    "common": {"seed": 0, "rounds": 50, "clients_total": 10, "clients_per_round": 10},
    "data": {"source": "synthetic", "num_classes": 10, "dim": 30, "samples_per_client": 100,
             "test_samples": 1000, "dirichlet_alpha": 0.5, "class_sep": 1.5, "feature_shift": 5.0},
    "model": {"kind": "logreg"},
    "local": {"local_epochs": 1, "batch_size": 100, "learning_rate": 0.05},
    "optimizer": {"kind": "fedavg"},
}

ATTACKS: dict[str, tuple[str, dict]] = {
    "byz_zero": ("byzantine", {"byzantine_mode": "zero", "malicious_ratio": 0.1}),
    "byz_random": ("byzantine", {"byzantine_mode": "random", "malicious_ratio": 0.1}),
    "byz_flip": ("byzantine", {"byzantine_mode": "flip", "malicious_ratio": 0.1}),
    "label_flip": ("label_flip", {"flip_pairs": [[3, 9], [2, 1]], "malicious_ratio": 0.1}),
}
EXTRA_ATTACKS: dict[str, tuple[str, dict]] = {
    "model_replacement": ("model_replacement", {"flip_pairs": [[3, 9], [2, 1]], "malicious_ratio": 0.1}),
    "dlg": ("dlg", {"malicious_ratio": 0.1, "dlg_iters": 200}),
}

DEFENSE_ARGS: dict[str, dict] = {
    "krum": {"byzantine_f": 1},
    "mkrum": {"byzantine_f": 1, "krum_m": 5},
    "foolsgold": {"foolsgold_kappa": 1.0},
    "norm_clip": {"clip_tau": 5.0},
    "rfa": {"weiszfeld_nu": 1e-6, "weiszfeld_iters": 100},
    "geo_median": {"weiszfeld_nu": 1e-6, "weiszfeld_iters": 100},
    "slsgd": {"trim_beta": 0.1, "slsgd_alpha": 0.5},
    "weak_dp": {"clip_tau": 5.0, "noise_sigma": 0.001},
    "cclip": {"clip_tau": 5.0},
    "coord_median": {},
    "trimmed_mean": {"trim_beta": 0.1},
    "robust_lr": {"rlr_theta": 2, "rlr_eta": 1.0},
    "crfl": {"clip_tau": 100.0, "noise_sigma": 0.001},
}
assert set(DEFENSE_ARGS) == set(DEFENSE_KINDS)

# the three defenses the comparison grid must always cover
HIGHLIGHTED_DEFENSES = ("mkrum", "foolsgold", "rfa")


def _security(attack: str | None = None, defense: str | None = None) -> dict:
    sec: dict = {"enable_attack": False, "enable_defense": False}
    if attack is not None:
        kind, args = {**ATTACKS, **EXTRA_ATTACKS}[attack]
        sec.update(enable_attack=True, attack_type=kind, attack_args=dict(args))
    if defense is not None:
        sec.update(enable_defense=True, defense_type=defense, defense_args=dict(DEFENSE_ARGS[defense]))
    return sec


def _catalog() -> dict[str, dict]:
    cat = {"benign": _security()}
    for a in (*ATTACKS, *EXTRA_ATTACKS):
        cat[f"attack-{a}"] = _security(attack=a)
    for d in DEFENSE_KINDS:
        cat[f"defense-{d}"] = _security(defense=d)
    for a in ATTACKS:
        for d in DEFENSE_KINDS:
            cat[f"attackXdefense-{a}-{d}"] = _security(attack=a, defense=d)
    return cat


CATALOG = _catalog()


def preset_names() -> list[str]:
    return list(CATALOG)


def preset(name: str) -> ExperimentConfig:
    if name not in CATALOG:
        raise ConfigError(f"unknown preset {name!r}; available:\n  " + "\n  ".join(CATALOG))
    raw = {k: dict(v) for k, v in BASE.items()}
    raw["security"] = CATALOG[name]
    raw["name"] = name
    return config_from_dict(raw)
