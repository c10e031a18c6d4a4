"""Datasets: synthetic Gaussian clusters, CSV ingestion and non-IID splits."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64)
        y = np.array(self.labels, dtype=np.int64).reshape(-1)
        if x.ndim != 2:
            raise ContractError(f"features must be 2-D, got shape {x.shape}")
        if x.shape[0] != y.shape[0]:
            raise ContractError(f"{x.shape[0]} feature rows but {y.shape[0]} labels")
        if not np.all(np.isfinite(x)):
            raise ContractError("features contain NaN or Inf")
        if self.num_classes < 2:
            raise ContractError("num_classes must be at least 2")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise ContractError(f"labels must lie in [0, {self.num_classes})")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)

    def with_labels(self, labels) -> Dataset:
        return Dataset(self.features, labels, self.num_classes)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )

    __hash__ = None  # type: ignore[assignment]


def make_synthetic(num_classes: int, dim: int, total_samples: int, seed: int,
                   class_sep: float = 3.0, shift: float = 0.0) -> Dataset:
    """Gaussian class clusters with unit-variance noise.

    Class means are drawn once from N(shift, class_sep^2 I); ``shift`` moves
    every feature off zero, like raw pixel intensities.  Labels cycle through
    the classes before shuffling, so class counts differ by at most one.
    """
    if num_classes < 2 or dim < 1 or total_samples < 1:
        raise ConfigError("make_synthetic needs num_classes >= 2, dim >= 1 and total_samples >= 1")
    if class_sep <= 0:
        raise ConfigError("class_sep must be positive")
    rng = np.random.default_rng(seed)
    means = shift + rng.normal(0.0, class_sep, size=(num_classes, dim))
    labels = np.arange(total_samples) % num_classes
    rng.shuffle(labels)
    features = means[labels] + rng.standard_normal((total_samples, dim))
    return Dataset(features, labels, num_classes)


def train_test_split(data: Dataset, test_samples: int) -> tuple[Dataset, Dataset]:
    """Hold out the trailing rows.  make_synthetic output is already shuffled."""
    if not 0 < test_samples < len(data):
        raise ConfigError(f"test_samples must be in (0, {len(data)})")
    n = len(data) - test_samples
    return data.subset(np.arange(n)), data.subset(np.arange(n, len(data)))


def partition_dirichlet(data: Dataset, num_clients: int, alpha: float, seed: int) -> list[Dataset]:
    """Split a dataset across clients with Dirichlet(alpha) label skew.

    For each class the samples are shuffled and cut according to a
    Dirichlet(alpha) proportion vector over clients.  A client left empty
    takes one sample from the currently largest client.  Each partition keeps
    the source row order.
    """
    if num_clients < 1:
        raise ConfigError("num_clients must be at least 1")
    if alpha <= 0:
        raise ConfigError("dirichlet alpha must be positive")
    if len(data) < num_clients:
        raise ConfigError(f"cannot give {num_clients} clients at least one sample from {len(data)} samples")
    if num_clients == 1:
        return [data]

    rng = np.random.default_rng(seed)
    buckets: list[list[int]] = [[] for _ in range(num_clients)]
    for c in range(data.num_classes):
        idx = np.flatnonzero(data.labels == c)
        rng.shuffle(idx)
        props = rng.dirichlet(np.full(num_clients, alpha))
        cuts = (np.cumsum(props)[:-1] * idx.size).astype(np.int64)
        for client, part in enumerate(np.split(idx, cuts)):
            buckets[client].extend(part.tolist())

    for client in range(num_clients):
        if not buckets[client]:
            donor = max(range(num_clients), key=lambda k: len(buckets[k]))
            buckets[client].append(buckets[donor].pop())

    return [data.subset(sorted(b)) for b in buckets]


def load_csv(path: str | Path, num_classes: int | None = None) -> Dataset:
    """Read ``f0,...,f{d-1},label`` rows into a Dataset."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{path}: empty CSV file") from None
        dim = len(header) - 1
        expected = [f"f{i}" for i in range(dim)] + ["label"]
        if [h.strip() for h in header] != expected:
            raise ConfigError(f"{path}: header must be {','.join(expected)}")
        rows = [r for r in reader if r]
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    try:
        features = np.array([[float(v) for v in r[:dim]] for r in rows])
        labels = np.array([int(r[dim]) for r in rows])
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"{path}: malformed row ({exc})") from None
    if labels.min() < 0:
        raise ConfigError(f"{path}: labels must be non-negative integers")
    inferred = int(labels.max()) + 1
    if num_classes is None:
        num_classes = max(inferred, 2)
    elif inferred > num_classes:
        raise ConfigError(f"{path}: label {inferred - 1} exceeds num_classes={num_classes}")
    return Dataset(features, labels, num_classes)
