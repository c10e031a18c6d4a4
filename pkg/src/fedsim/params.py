"""Flat parameter vectors with named segment layout."""

from __future__ import annotations

from dataclasses import dataclass
from math import prod
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractError, LayoutError

Layout = tuple[tuple[str, tuple[int, ...]], ...]


def _normalize_layout(layout: Iterable[tuple[str, Sequence[int]]]) -> Layout:
    return tuple((str(name), tuple(int(d) for d in shape)) for name, shape in layout)


def layout_size(layout: Layout) -> int:
    return sum(prod(shape) for _, shape in layout)


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Immutable float64 vector plus the (name, shape) segments it flattens.

    All attacks and defenses exchange model state as ParamVectors.  Values
    must be finite; the backing array is read-only so a vector can be shared
    between rounds, hooks and threads without defensive copies.
    """

    values: np.ndarray
    layout: Layout

    def __post_init__(self):
        layout = _normalize_layout(self.layout)
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if layout_size(layout) != values.size:
            raise LayoutError(f"layout describes {layout_size(layout)} values but got {values.size}")
        if not np.all(np.isfinite(values)):
            raise ContractError("parameter vector contains NaN or Inf")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "layout", layout)

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray]) -> ParamVector:
        layout = tuple((name, np.shape(a)) for name, a in arrays.items())
        flat = [np.asarray(a, dtype=np.float64).reshape(-1) for a in arrays.values()]
        return cls(np.concatenate(flat) if flat else np.zeros(0), layout)

    @classmethod
    def zeros(cls, layout: Layout) -> ParamVector:
        layout = _normalize_layout(layout)
        return cls(np.zeros(layout_size(layout)), layout)

    def __len__(self) -> int:
        return self.values.size

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ParamVector):
            return NotImplemented
        return self.layout == other.layout and np.array_equal(self.values, other.values)

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        segs = ", ".join(f"{n}:{prod(s)}" for n, s in self.layout)
        return f"ParamVector(len={len(self)}, [{segs}])"

    def with_values(self, values: np.ndarray) -> ParamVector:
        return ParamVector(values, self.layout)

    def arrays(self) -> dict[str, np.ndarray]:
        """Views of each segment reshaped to its declared shape."""
        out = {}
        offset = 0
        for name, shape in self.layout:
            n = prod(shape)
            out[name] = self.values[offset:offset + n].reshape(shape)
            offset += n
        return out

    def check_compatible(self, other: ParamVector) -> None:
        if self.layout != other.layout:
            raise LayoutError("parameter vectors have different layouts")

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


def stack(vectors: Sequence[ParamVector]) -> np.ndarray:
    """Rows of a (n, d) matrix, after checking every layout matches the first."""
    if not vectors:
        raise ContractError("cannot stack an empty list of parameter vectors")
    first = vectors[0]
    for v in vectors[1:]:
        first.check_compatible(v)
    return np.stack([v.values for v in vectors])
