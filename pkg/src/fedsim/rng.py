"""Named, independent random substreams derived from one master seed.

Every consumer of randomness asks for a stream keyed by a purpose string plus
integer keys (round, client id, ...).  Turning a feature on or off therefore
never shifts the draws seen by any other feature.
"""

from __future__ import annotations

import zlib

import numpy as np


def _purpose_key(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def substream(seed: int, purpose: str, *keys: int) -> np.random.Generator:
    if seed < 0 or any(k < 0 for k in keys):
        raise ValueError("seed and stream keys must be non-negative")
    return np.random.default_rng(np.random.SeedSequence([seed, _purpose_key(purpose), *keys]))


def subseed(seed: int, purpose: str, *keys: int) -> int:
    """A 32-bit integer seed drawn from the named substream."""
    return int(substream(seed, purpose, *keys).integers(0, 2**32))


class RngStreams:
    """Factory for substreams bound to a master seed."""

    def __init__(self, seed: int):
        self.seed = int(seed)

    def __call__(self, purpose: str, *keys: int) -> np.random.Generator:
        return substream(self.seed, purpose, *keys)

    def seed_for(self, purpose: str, *keys: int) -> int:
        return subseed(self.seed, purpose, *keys)

    def __repr__(self) -> str:
        return f"RngStreams(seed={self.seed})"
