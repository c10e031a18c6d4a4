"""Server-side defenses behind a before/on/after-aggregation interface."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Optional, Sequence

import numpy as np

from . import aggregation as agg
from .errors import ConfigError, ContractError
from .params import ParamVector
from .updates import ClientUpdate, RoundState

BEFORE, ON, AFTER = "before", "on", "after"

STAGES: dict[str, frozenset[str]] = {
    "krum": frozenset({BEFORE}),
    "mkrum": frozenset({BEFORE}),
    "foolsgold": frozenset({BEFORE}),
    "norm_clip": frozenset({BEFORE}),
    "rfa": frozenset({ON}),
    "geo_median": frozenset({ON}),
    "slsgd": frozenset({ON}),
    "weak_dp": frozenset({ON}),
    "cclip": frozenset({ON}),
    "coord_median": frozenset({ON}),
    "trimmed_mean": frozenset({ON}),
    "robust_lr": frozenset({ON}),
    "crfl": frozenset({AFTER}),
}
DEFENSE_KINDS = tuple(STAGES)

KIND_KEYS = {
    "krum": ("byzantine_f",),
    "mkrum": ("byzantine_f", "krum_m"),
    "foolsgold": ("foolsgold_kappa",),
    "norm_clip": ("clip_tau",),
    "rfa": ("weiszfeld_nu", "weiszfeld_iters"),
    "geo_median": ("weiszfeld_nu", "weiszfeld_iters"),
    "slsgd": ("trim_beta", "slsgd_alpha"),
    "weak_dp": ("clip_tau", "noise_sigma"),
    "cclip": ("clip_tau",),
    "coord_median": (),
    "trimmed_mean": ("trim_beta",),
    "robust_lr": ("rlr_theta", "rlr_eta"),
    "crfl": ("clip_tau", "noise_sigma"),
}
DEFAULTS: dict[str, Any] = {
    "byzantine_f": 1,
    "krum_m": 5,
    "foolsgold_kappa": 1.0,
    "clip_tau": 5.0,
    "noise_sigma": 0.001,
    "trim_beta": 0.1,
    "slsgd_alpha": 0.5,
    "rlr_theta": 2,
    "rlr_eta": 1.0,
    "weiszfeld_nu": 1e-6,
    "weiszfeld_iters": 100,
}
_ALL_KEYS = tuple(DEFAULTS)


@dataclass(frozen=True)
class DefenseSpec:
    kind: str
    byzantine_f: Optional[int] = None
    krum_m: Optional[int] = None
    foolsgold_kappa: Optional[float] = None
    clip_tau: Optional[float] = None
    noise_sigma: Optional[float] = None
    trim_beta: Optional[float] = None
    slsgd_alpha: Optional[float] = None
    rlr_theta: Optional[int] = None
    rlr_eta: Optional[float] = None
    weiszfeld_nu: Optional[float] = None
    weiszfeld_iters: Optional[int] = None

    def __post_init__(self):
        if self.kind not in STAGES:
            raise ConfigError(f"unknown defense_type {self.kind!r}; expected one of {list(DEFENSE_KINDS)}")
        own = set(KIND_KEYS[self.kind])
        for key in _ALL_KEYS:
            value = getattr(self, key)
            if key in own and value is None:
                raise ConfigError(f"defense_args.{key} is required for defense_type {self.kind!r}")
            if key not in own and value is not None:
                raise ConfigError(f"defense_args.{key} does not apply to defense_type {self.kind!r}")
        checks = {
            "byzantine_f": lambda v: v >= 0,
            "krum_m": lambda v: v >= 1,
            "foolsgold_kappa": lambda v: v > 0,
            "clip_tau": lambda v: v > 0,
            "noise_sigma": lambda v: v >= 0,
            "trim_beta": lambda v: 0 <= v < 0.5,
            "slsgd_alpha": lambda v: 0 < v <= 1,
            "rlr_theta": lambda v: v >= 1,
            "rlr_eta": lambda v: v > 0,
            "weiszfeld_nu": lambda v: v > 0,
            "weiszfeld_iters": lambda v: v >= 1,
        }
        for key in own:
            if not checks[key](getattr(self, key)):
                raise ConfigError(f"defense_args.{key}={getattr(self, key)!r} is out of range")

    @classmethod
    def from_args(cls, kind: str, args: Mapping[str, Any] | None = None) -> DefenseSpec:
        if kind not in STAGES:
            raise ConfigError(f"unknown defense_type {kind!r}; expected one of {list(DEFENSE_KINDS)}")
        args = dict(args or {})
        own = KIND_KEYS[kind]
        unknown = sorted(set(args) - set(own))
        if unknown:
            raise ConfigError(f"defense_args: unknown key(s) {unknown} for defense_type {kind!r}; "
                              f"allowed: {list(own)}")
        return cls(kind=kind, **{k: args.get(k, DEFAULTS[k]) for k in own})

    def check_round_size(self, n: int) -> None:
        """Constraints that depend on how many updates reach the defense."""
        if self.kind in ("krum", "mkrum") and n - self.byzantine_f - 2 < 1:
            raise ConfigError(f"{self.kind}: n - byzantine_f - 2 >= 1 fails for n={n}, f={self.byzantine_f}")
        if self.kind == "mkrum" and not n - self.krum_m > 2 * self.byzantine_f + 2:
            raise ConfigError(f"mkrum: n - krum_m > 2*byzantine_f + 2 fails for n={n}, "
                              f"krum_m={self.krum_m}, byzantine_f={self.byzantine_f}")
        if self.kind in ("trimmed_mean", "slsgd"):
            agg.trim_count(self.trim_beta, n)


def is_defense_before_aggregation(spec: DefenseSpec | None) -> bool:
    return spec is not None and BEFORE in STAGES[spec.kind]


def is_defense_on_aggregation(spec: DefenseSpec | None) -> bool:
    return spec is not None and ON in STAGES[spec.kind]


def is_defense_after_aggregation(spec: DefenseSpec | None) -> bool:
    return spec is not None and AFTER in STAGES[spec.kind]


# --- Foolsgold --------------------------------------------------------------

def foolsgold_weights(histories: np.ndarray, kappa: float = 1.0) -> np.ndarray:
    """Per-client weights in [0, 1] from the cosine similarity of update histories.

    Pipeline: pairwise cosine similarity, pardoning of clients that are less
    similar to others than their peers are, 1 - max similarity, rescaling by
    the largest weight, then a kappa-scaled logit clipped to [0, 1].  Clients
    with an all-zero history get weight 1.
    """
    H = np.asarray(histories, dtype=np.float64)
    n = H.shape[0]
    norms = np.linalg.norm(H, axis=1)
    live = norms > 0
    unit = np.zeros_like(H)
    unit[live] = H[live] / norms[live, None]
    cs = unit @ unit.T - np.diag(live.astype(np.float64))
    cs[~live, :] = 0.0
    cs[:, ~live] = 0.0
    maxcs = cs.max(axis=1)
    for i in range(n):
        for j in range(n):
            if i != j and maxcs[i] < maxcs[j]:
                cs[i, j] *= maxcs[i] / maxcs[j]
    wv = np.clip(1.0 - cs.max(axis=1), 0.0, 1.0)
    top = wv.max()
    if top > 0:
        wv = wv / top
    wv[wv == 1.0] = 0.99
    pos = wv > 0
    wv[pos] = kappa * (np.log(wv[pos] / (1.0 - wv[pos])) + 0.5)
    wv = np.clip(wv, 0.0, 1.0)
    wv[~live] = 1.0
    return wv


# --- state ------------------------------------------------------------------

STATE_MAGIC = b"FSDS"
STATE_VERSION = 1


@dataclass
class DefenderState:
    """Cross-round memory of the defender.

    ``foolsgold_history`` maps client id to the running sum of that client's
    deltas from the global model.  ``accumulators`` holds named vectors for
    any other stateful defense.
    """

    foolsgold_history: dict[int, np.ndarray] = field(default_factory=dict)
    accumulators: dict[str, np.ndarray] = field(default_factory=dict)

    def is_empty(self) -> bool:
        return not self.foolsgold_history and not self.accumulators

    def to_bytes(self) -> bytes:
        """Little-endian layout, version 1:

        magic "FSDS" | u32 version | u32 n_history
        n_history x (i64 client_id | u32 length | f64[length])
        u32 n_accumulators
        n_accumulators x (u16 name_len | utf-8 name | u32 length | f64[length])
        """
        parts = [STATE_MAGIC, struct.pack("<II", STATE_VERSION, len(self.foolsgold_history))]
        for cid in sorted(self.foolsgold_history):
            v = np.ascontiguousarray(self.foolsgold_history[cid], dtype="<f8")
            parts.append(struct.pack("<qI", cid, v.size))
            parts.append(v.tobytes())
        parts.append(struct.pack("<I", len(self.accumulators)))
        for name in sorted(self.accumulators):
            raw = name.encode("utf-8")
            v = np.ascontiguousarray(self.accumulators[name], dtype="<f8")
            parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<I", v.size))
            parts.append(v.tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> DefenderState:
        if blob[:4] != STATE_MAGIC:
            raise ContractError("not a defender state file (bad magic)")
        version, n_hist = struct.unpack_from("<II", blob, 4)
        if version != STATE_VERSION:
            raise ContractError(f"unsupported defender state version {version}")
        pos = 12
        state = cls()
        for _ in range(n_hist):
            cid, size = struct.unpack_from("<qI", blob, pos)
            pos += 12
            state.foolsgold_history[cid] = np.frombuffer(blob, "<f8", size, pos).astype(np.float64)
            pos += 8 * size
        (n_acc,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        for _ in range(n_acc):
            (name_len,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (size,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            state.accumulators[name] = np.frombuffer(blob, "<f8", size, pos).astype(np.float64)
            pos += 8 * size
        if pos != len(blob):
            raise ContractError("trailing bytes in defender state file")
        return state

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> DefenderState:
        return cls.from_bytes(Path(path).read_bytes())


def foolsgold_reweight(updates: Sequence[ClientUpdate], global_params: ParamVector,
                       state: DefenderState, kappa: float = 1.0) -> list[ClientUpdate]:
    """Accumulate each client's delta into ``state`` and shrink deltas by the Foolsgold weight."""
    if not updates:
        return []
    for u in updates:
        global_params.check_compatible(u.params)
        delta = u.params.values - global_params.values
        prev = state.foolsgold_history.get(u.client_id)
        state.foolsgold_history[u.client_id] = delta.copy() if prev is None else prev + delta
    H = np.stack([state.foolsgold_history[u.client_id] for u in updates])
    weights = foolsgold_weights(H, kappa)
    out = []
    for u, a in zip(updates, weights):
        if a == 1.0:
            out.append(u)
        else:
            g = global_params.values
            out.append(u.with_params(u.params.with_values(g + a * (u.params.values - g))))
    return out


class Defender:
    """The run's single defense instance.

    A disabled defender (``spec=None``) reports no stages and every
    ``defend_*`` call is an identity.
    """

    def __init__(self, spec: DefenseSpec | None, state: DefenderState | None = None):
        self.spec = spec
        self.state = state if state is not None else DefenderState()

    @property
    def enabled(self) -> bool:
        return self.spec is not None

    @property
    def name(self) -> str:
        return self.spec.kind if self.spec else "none"

    def is_defense_before_aggregation(self) -> bool:
        return is_defense_before_aggregation(self.spec)

    def is_defense_on_aggregation(self) -> bool:
        return is_defense_on_aggregation(self.spec)

    def is_defense_after_aggregation(self) -> bool:
        return is_defense_after_aggregation(self.spec)

    def is_stateful(self) -> bool:
        return self.spec is not None and self.spec.kind == "foolsgold"

    def defend_before_aggregation(self, updates: Sequence[ClientUpdate], aux: RoundState) -> list[ClientUpdate]:
        if not self.is_defense_before_aggregation():
            return list(updates)
        s = self.spec
        if s.kind in ("krum", "mkrum"):
            s.check_round_size(len(updates))
            return agg.krum_select(updates, s.byzantine_f, 1 if s.kind == "krum" else s.krum_m)
        if s.kind == "foolsgold":
            return foolsgold_reweight(updates, aux.global_params, self.state, s.foolsgold_kappa)
        return agg.norm_clip(updates, aux.global_params, s.clip_tau)

    def defend_on_aggregation(self, updates: Sequence[ClientUpdate], aux: RoundState,
                              fallback: Callable[[Sequence[ClientUpdate]], ParamVector] = agg.fedavg_aggregate
                              ) -> ParamVector:
        if not self.is_defense_on_aggregation():
            return fallback(updates)
        s = self.spec
        s.check_round_size(len(updates))
        g = aux.global_params
        if s.kind == "rfa":
            return agg.rfa_aggregate(updates, s.weiszfeld_nu, s.weiszfeld_iters)
        if s.kind == "geo_median":
            return agg.geo_median_aggregate(updates, s.weiszfeld_nu, s.weiszfeld_iters)
        if s.kind == "coord_median":
            return agg.coord_median_aggregate(updates)
        if s.kind == "trimmed_mean":
            return agg.trimmed_mean_aggregate(updates, s.trim_beta)
        if s.kind == "slsgd":
            return agg.slsgd_aggregate(updates, g, s.trim_beta, s.slsgd_alpha)
        if s.kind == "weak_dp":
            return agg.weak_dp_aggregate(updates, g, s.clip_tau, s.noise_sigma, aux.rng("weak_dp"))
        if s.kind == "cclip":
            return agg.cclip_aggregate(updates, g, s.clip_tau)
        return agg.robust_lr_aggregate(updates, g, s.rlr_theta, s.rlr_eta)

    def defend_after_aggregation(self, global_params: ParamVector, aux: RoundState) -> ParamVector:
        if not self.is_defense_after_aggregation():
            return global_params
        return agg.crfl_postprocess(global_params, self.spec.clip_tau, self.spec.noise_sigma, aux.rng("crfl"))
