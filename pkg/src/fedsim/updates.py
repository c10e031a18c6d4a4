"""Records passed between the engine, the attacker and the defender."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

from .errors import ContractError
from .params import ParamVector
from .rng import RngStreams


@dataclass(frozen=True)
class ClientUpdate:
    """What a client submits: its id, how many samples it trained on, its model."""

    client_id: int
    sample_count: int
    params: ParamVector

    def __post_init__(self):
        if self.sample_count < 0:
            raise ContractError("sample_count must be non-negative")

    def with_params(self, params: ParamVector) -> ClientUpdate:
        return replace(self, params=params)


@dataclass(frozen=True)
class RoundState:
    """Server-side state at the start of a round.

    This is also the ``auxiliary_info`` every attack and defense hook
    receives: ``global_params`` is the model broadcast to clients this round.
    """

    round_index: int
    global_params: ParamVector
    seed: int = 0
    prev_global_params: Optional[ParamVector] = None

    def __post_init__(self):
        if self.round_index < 0:
            raise ContractError("round_index must be non-negative")

    @property
    def streams(self) -> RngStreams:
        return RngStreams(self.seed)

    def rng(self, purpose: str, *keys: int):
        return self.streams(purpose, self.round_index, *keys)

    def advance(self, new_global: ParamVector) -> RoundState:
        return RoundState(self.round_index + 1, new_global, self.seed, self.global_params)


def sorted_by_client(updates) -> list[ClientUpdate]:
    return sorted(updates, key=lambda u: u.client_id)
