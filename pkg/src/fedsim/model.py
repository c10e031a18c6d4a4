"""Small differentiable classifiers over flat parameter vectors.

Two model families are supported: multinomial logistic regression and a tanh
MLP.  Gradients are written out by hand.  The core routine also returns
gradients with respect to the inputs and the (soft) targets, and it is
dtype-generic so complex-step differentiation can run through it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import ConfigError, ContractError, LayoutError, SkipClient
from .params import Layout, ParamVector

INIT_STD = 0.01


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    input_dim: int
    num_classes: int
    hidden_dims: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.kind not in ("logreg", "mlp"):
            raise ConfigError(f"unknown model kind {self.kind!r} (expected logreg or mlp)")
        if self.input_dim < 1:
            raise ConfigError("input_dim must be positive")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be at least 2")
        if self.kind == "logreg" and self.hidden_dims:
            raise ConfigError("logreg takes no hidden_dims")
        if self.kind == "mlp" and (not self.hidden_dims or min(self.hidden_dims) < 1):
            raise ConfigError("mlp needs at least one positive hidden dim")

    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_out, fan_in) for each affine layer."""
        sizes = [self.input_dim, *self.hidden_dims, self.num_classes]
        return [(sizes[i + 1], sizes[i]) for i in range(len(sizes) - 1)]

    def layout(self) -> Layout:
        if self.kind == "logreg":
            (out, inp), = self.layer_dims()
            return (("W", (out, inp)), ("b", (out,)))
        layout = []
        for i, (out, inp) in enumerate(self.layer_dims()):
            layout += [(f"W{i}", (out, inp)), (f"b{i}", (out,))]
        return tuple(layout)

    def num_params(self) -> int:
        return sum(o * i + o for o, i in self.layer_dims())


@dataclass(frozen=True)
class TrainConfig:
    local_epochs: int = 1
    batch_size: int = 32
    learning_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.local_epochs < 1:
            raise ConfigError("local_epochs must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be non-negative")

    def steps_per_run(self, num_samples: int) -> int:
        return self.local_epochs * math.ceil(num_samples / self.batch_size)


def init_params(spec: ModelSpec, seed: int) -> ParamVector:
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in spec.layout():
        if name.startswith("W"):
            arrays[name] = rng.normal(0.0, INIT_STD, size=shape)
        else:
            arrays[name] = np.zeros(shape)
    return ParamVector.from_arrays(arrays)


def _check(spec: ModelSpec, params: ParamVector) -> None:
    if params.layout != spec.layout():
        raise LayoutError(f"parameter layout does not match {spec.kind} model {spec.layout()}")


def _unpack(spec: ModelSpec, values: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    layers = []
    offset = 0
    for out, inp in spec.layer_dims():
        W = values[offset:offset + out * inp].reshape(out, inp)
        offset += out * inp
        b = values[offset:offset + out]
        offset += out
        layers.append((W, b))
    return layers


def _log_softmax(z: np.ndarray) -> np.ndarray:
    # shifting by the real part keeps the identity exact for complex inputs
    s = z - z.real.max(axis=1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=1, keepdims=True))


def _mean(x: np.ndarray) -> float:
    """Mean anchored at the first element: equal inputs give that value exactly."""
    x0 = float(x[0])
    return x0 + math.fsum(x - x0) / x.size


def logits(spec: ModelSpec, values: np.ndarray, X: np.ndarray) -> np.ndarray:
    layers = _unpack(spec, values)
    h = X
    for i, (W, b) in enumerate(layers):
        h = h @ W.T + b
        if i < len(layers) - 1:
            h = np.tanh(h)
    return h


def loss_and_grads(spec: ModelSpec, values: np.ndarray, X: np.ndarray, T: np.ndarray):
    """Mean cross-entropy against target distributions ``T`` (rows of the simplex).

    Returns ``(loss, dparams, dX, dT)`` where ``dparams`` is flat in layout
    order.  Works for real or complex ``values``/``X``/``T``.
    """
    layers = _unpack(spec, values)
    acts = [X]
    h = X
    for i, (W, b) in enumerate(layers):
        h = h @ W.T + b
        if i < len(layers) - 1:
            h = np.tanh(h)
            acts.append(h)
    logp = _log_softmax(h)
    B = X.shape[0]
    per_sample = -(T * logp).sum(axis=1)
    if np.iscomplexobj(per_sample):
        loss = per_sample.sum() / B
    else:
        loss = _mean(per_sample)

    delta = (np.exp(logp) * T.sum(axis=1, keepdims=True) - T) / B
    grads = []
    for i in reversed(range(len(layers))):
        W, _ = layers[i]
        grads.append(delta.sum(axis=0))
        grads.append((delta.T @ acts[i]).reshape(-1))
        delta = delta @ W
        if i > 0:
            delta = delta * (1.0 - acts[i] ** 2)
    dparams = np.concatenate(grads[::-1])
    return loss, dparams, delta, -logp / B


def _one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    return np.eye(num_classes)[labels]


def forward_loss_grad(spec: ModelSpec, params: ParamVector, batch: Dataset) -> tuple[float, ParamVector]:
    _check(spec, params)
    if len(batch) == 0:
        raise ContractError("batch must be nonempty")
    if batch.dim != spec.input_dim:
        raise ContractError(f"batch has {batch.dim} features, model expects {spec.input_dim}")
    loss, grad, _, _ = loss_and_grads(spec, params.values, batch.features,
                                      _one_hot(batch.labels, spec.num_classes))
    return float(loss), params.with_values(grad)


def local_train_with_loss(spec: ModelSpec, params: ParamVector, data: Dataset,
                          cfg: TrainConfig) -> tuple[ParamVector, float]:
    """Mini-batch SGD; also returns the mean batch loss of the final epoch."""
    _check(spec, params)
    n = len(data)
    if n == 0:
        raise SkipClient("client dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    X = data.features
    T = _one_hot(data.labels, spec.num_classes)
    w = params.values.copy()
    epoch_losses: list[float] = []
    for _ in range(cfg.local_epochs):
        perm = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, cfg.batch_size):
            # canonical order inside a batch: a full batch reproduces the plain gradient bit-exactly
            idx = np.sort(perm[start:start + cfg.batch_size])
            loss, g, _, _ = loss_and_grads(spec, w, X[idx], T[idx])
            w -= cfg.learning_rate * g
            epoch_losses.append(loss)
    return params.with_values(w), float(np.mean(epoch_losses))


def local_train(spec: ModelSpec, params: ParamVector, data: Dataset, cfg: TrainConfig) -> ParamVector:
    return local_train_with_loss(spec, params, data, cfg)[0]


def evaluate(spec: ModelSpec, params: ParamVector, data: Dataset) -> tuple[float, float]:
    """Accuracy (argmax, ties to the lowest class id) and mean cross-entropy."""
    _check(spec, params)
    if len(data) == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    z = logits(spec, params.values, data.features)
    pred = np.argmax(z, axis=1)
    acc = float(np.mean(pred == data.labels))
    logp = _log_softmax(z)
    loss = _mean(-logp[np.arange(len(data)), data.labels])
    return acc, loss
