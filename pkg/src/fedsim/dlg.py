"""Gradient-matching data reconstruction (deep leakage from gradients).

The attacker keeps dummy inputs ``x`` and dummy label logits ``l`` and runs
gradient descent on

    D(x, l) = || grad_params L(x, softmax(l)) - g_target ||^2

The gradient of D needs mixed second derivatives of the loss.  With the
residual ``r`` held fixed, ``grad_z <grad_params L(z), r>`` is the derivative
along ``r`` of the input gradient, which is evaluated to machine precision by
the complex step ``Im(grad_z L(z; params + i*h*r)) / h``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ReconstructionError
from .model import ModelSpec, loss_and_grads
from .params import ParamVector

COMPLEX_STEP = 1e-20
MIN_STEP = 1e-30


@dataclass
class Reconstruction:
    features: np.ndarray
    label_probs: np.ndarray
    match_loss: float
    iterations: int
    history: list[float] = field(default_factory=list)


def gradient_from_models(prev: ParamVector, new: ParamVector, lr: float, steps: int) -> ParamVector:
    """One-step approximation of the gradient a client followed: (prev - new) / (lr * steps)."""
    prev.check_compatible(new)
    if lr <= 0 or steps < 1:
        raise ContractError("need a positive learning rate and at least one local step")
    return prev.with_values((prev.values - new.values) / (lr * steps))


def _softmax(l: np.ndarray) -> np.ndarray:
    e = np.exp(l - l.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def match_loss(spec: ModelSpec, params: np.ndarray, target: np.ndarray,
               x: np.ndarray, label_logits: np.ndarray) -> float:
    _, g, _, _ = loss_and_grads(spec, params, x, _softmax(label_logits))
    r = g - target
    return float(r @ r)


def _match_and_grad(spec, params, target, x, label_logits):
    T = _softmax(label_logits)
    _, g, _, _ = loss_and_grads(spec, params, x, T)
    r = g - target
    D = float(r @ r)
    _, _, dx, dT = loss_and_grads(spec, params + 1j * COMPLEX_STEP * r,
                                  x.astype(complex), T.astype(complex))
    gx = 2.0 * dx.imag / COMPLEX_STEP
    gT = 2.0 * dT.imag / COMPLEX_STEP
    # softmax Jacobian-vector product; zero-probability entries contribute nothing
    gl = T * (gT - (T * gT).sum(axis=1, keepdims=True))
    return D, gx, gl


def _check_finite(iteration, D, gx, gl):
    if not (np.isfinite(D) and np.all(np.isfinite(gx)) and np.all(np.isfinite(gl))):
        raise ReconstructionError(iteration, D)


def reconstruct(spec: ModelSpec, params: ParamVector, target_grad: ParamVector, *,
                num_samples: int = 1, iters: int = 300, lr: float = 0.1, seed: int = 0,
                restarts: int = 1, init: tuple[np.ndarray, np.ndarray] | None = None,
                tol: float = 0.0) -> Reconstruction:
    """Recover ``num_samples`` inputs and soft labels whose gradient matches ``target_grad``.

    Dummies start from N(0, 1) unless ``init`` gives ``(features, label_logits)``.
    Each iteration takes a gradient step on the features, then one on the
    label logits.  A step that raises the matching loss is halved until it
    does not; an accepted step doubles that block's next trial step, so the
    loss history is non-increasing.  Stops after ``iters`` iterations, when
    the loss drops to ``tol`` or when neither block can make progress.

    The matching loss has separate basins for each sign of (predicted minus
    dummy label), and a run cannot cross between them.  ``restarts`` draws
    that many independent initializations and keeps the best result.
    """
    params.check_compatible(target_grad)
    if params.layout != spec.layout():
        raise ContractError("parameters do not match the model spec")
    if iters < 1 or lr <= 0 or restarts < 1:
        raise ContractError("dlg needs iters >= 1, lr > 0 and restarts >= 1")
    if init is not None:
        x = np.array(init[0], dtype=np.float64).reshape(-1, spec.input_dim)
        l = np.array(init[1], dtype=np.float64).reshape(-1, spec.num_classes)
        return _descend(spec, params.values, target_grad.values, x, l, iters, lr, tol)
    best = None
    for k in range(restarts):
        rng = np.random.default_rng(np.random.SeedSequence([seed, k]))
        x = rng.standard_normal((num_samples, spec.input_dim))
        l = rng.standard_normal((num_samples, spec.num_classes))
        result = _descend(spec, params.values, target_grad.values, x, l, iters, lr, tol)
        if best is None or result.match_loss < best.match_loss:
            best = result
        if best.match_loss <= tol:
            break
    return best


def _descend(spec, theta, target, x, l, iters, lr, tol) -> Reconstruction:

    D, gx, gl = _match_and_grad(spec, theta, target, x, l)
    _check_finite(0, D, gx, gl)
    history = [D]
    steps = [lr, lr]
    it = 0
    while it < iters and D > tol:
        it += 1
        moved = False
        # features and label logits are scaled very differently once the soft
        # labels saturate, so each block keeps its own backtracked step
        for block in (0, 1):
            while steps[block] >= MIN_STEP:
                if block == 0:
                    x_try, l_try = x - steps[0] * gx, l
                else:
                    x_try, l_try = x, l - steps[1] * gl
                D_try, gx_try, gl_try = _match_and_grad(spec, theta, target, x_try, l_try)
                if np.isfinite(D_try) and D_try <= D:
                    x, l, D, gx, gl = x_try, l_try, D_try, gx_try, gl_try
                    _check_finite(it, D, gx, gl)
                    steps[block] *= 2.0
                    moved = True
                    break
                steps[block] /= 2.0
        if not moved:
            it -= 1
            break
        history.append(D)
    return Reconstruction(x, _softmax(l), D, it, history)
