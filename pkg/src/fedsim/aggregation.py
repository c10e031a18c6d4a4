"""Aggregation rules over client updates.

Reductions run in ascending client-id order.  Sample-weighted means sum
sequentially; unweighted means (trimmed mean) are correctly rounded, so their
result does not depend on input order at all.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import ConfigError, ContractError
from .params import ParamVector, stack
from .updates import ClientUpdate, sorted_by_client


def _exact_mean_rows(rows: np.ndarray) -> np.ndarray:
    """Per-column mean rounded once from the exact rational value.

    The result does not depend on row order, never leaves the column's
    range, and a column of equal values averages to that value exactly.
    """
    n = rows.shape[0]
    if n == 1:
        return rows[0].copy()
    return np.array([float(sum(map(Fraction, col.tolist())) / n) for col in rows.T])


def fedavg_aggregate(updates: Sequence[ClientUpdate]) -> ParamVector:
    """Sample-weighted mean: sum_i n_i w_i / sum_i n_i."""
    if not updates:
        raise ContractError("fedavg needs at least one update")
    ordered = sorted_by_client(updates)
    total = sum(u.sample_count for u in ordered)
    if total <= 0:
        raise ContractError("total sample count is zero; fedavg weights are undefined")
    first = ordered[0].params
    if len(ordered) == 1:
        return first
    acc = np.zeros_like(first.values)
    for u in ordered:
        first.check_compatible(u.params)
        acc += u.sample_count * u.params.values
    return first.with_values(acc / total)


def unweighted_mean(updates: Sequence[ClientUpdate]) -> ParamVector:
    rows = stack([u.params for u in sorted_by_client(updates)])
    return updates[0].params.with_values(_exact_mean_rows(rows))


def coord_median_aggregate(updates: Sequence[ClientUpdate]) -> ParamVector:
    """Unweighted per-coordinate median; an even count averages the two middle values."""
    if not updates:
        raise ContractError("coordinate median needs at least one update")
    rows = np.sort(stack([u.params for u in updates]), axis=0)
    n = rows.shape[0]
    if n % 2:
        med = rows[n // 2].copy()
    else:
        med = (rows[n // 2 - 1] + rows[n // 2]) / 2.0
    return updates[0].params.with_values(med)


def trim_count(beta: float, n: int) -> int:
    k = math.floor(beta * n)
    if 2 * k >= n:
        raise ConfigError(f"trim_beta={beta} drops {k} values from each side of {n}; need 2k < n")
    return k


def trimmed_mean_aggregate(updates: Sequence[ClientUpdate], beta: float) -> ParamVector:
    """Per coordinate, drop the floor(beta*n) smallest and largest values and average the rest."""
    if not updates:
        raise ContractError("trimmed mean needs at least one update")
    if not 0 <= beta < 0.5:
        raise ConfigError("trim_beta must lie in [0, 0.5)")
    rows = np.sort(stack([u.params for u in updates]), axis=0)
    n = rows.shape[0]
    k = trim_count(beta, n)
    return updates[0].params.with_values(_exact_mean_rows(rows[k:n - k]))


def krum_scores(updates: Sequence[ClientUpdate], f: int) -> list[float]:
    """Sum of squared distances from each model to its n - f - 2 nearest peers."""
    n = len(updates)
    k = n - f - 2
    if f < 0 or k < 1:
        raise ConfigError(f"krum needs n - f - 2 >= 1 (n={n}, f={f})")
    W = stack([u.params for u in updates])
    d2 = np.array([[float(np.sum((W[i] - W[j]) ** 2)) for j in range(n)] for i in range(n)])
    scores = []
    for i in range(n):
        others = np.sort(np.delete(d2[i], i))
        scores.append(float(np.sum(others[:k])))
    return scores


def krum_select(updates: Sequence[ClientUpdate], f: int, m: int = 1) -> list[ClientUpdate]:
    """Keep the ``m`` lowest-score updates (ties to the lowest client id), in input order."""
    if not 1 <= m <= len(updates):
        raise ConfigError(f"krum_m must lie in [1, {len(updates)}], got {m}")
    scores = krum_scores(updates, f)
    order = sorted(range(len(updates)), key=lambda i: (scores[i], updates[i].client_id))
    keep = set(order[:m])
    return [u for i, u in enumerate(updates) if i in keep]


def clip_delta(w: ParamVector, center: ParamVector, tau: float) -> ParamVector:
    """Pull ``w`` back to within ``tau`` of ``center``; inside the ball it is returned as is."""
    w.check_compatible(center)
    d = w.values - center.values
    norm = float(np.linalg.norm(d))
    if norm <= tau:
        return w
    return w.with_values(center.values + d * (tau / norm))


def norm_clip(updates: Sequence[ClientUpdate], global_params: ParamVector, tau: float) -> list[ClientUpdate]:
    if not tau > 0:
        raise ConfigError("clip_tau must be positive")
    out = []
    for u in updates:
        clipped = clip_delta(u.params, global_params, tau)
        out.append(u if clipped is u.params else u.with_params(clipped))
    return out


def smoothed_objective(theta: np.ndarray, points: np.ndarray, weights: np.ndarray, nu: float) -> float:
    """sum_i a_i * h_nu(||theta - w_i||), with h_nu the Huber-style smoothing of the norm."""
    d = np.linalg.norm(points - theta, axis=1)
    h = np.where(d >= nu, d, d * d / (2 * nu) + nu / 2)
    return float(weights @ h)


def weiszfeld(points: np.ndarray, weights: np.ndarray, nu: float = 1e-6, iters: int = 100,
              tol: float = 1e-8) -> tuple[np.ndarray, list[np.ndarray]]:
    """Smoothed Weiszfeld iterations from the weighted mean.

    Returns the final iterate and the full iterate trajectory (start included).
    """
    points = np.asarray(points, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if points.shape[0] == 0:
        raise ContractError("geometric median of an empty set")
    if weights.shape != (points.shape[0],) or np.any(weights <= 0):
        raise ContractError("geometric median weights must be positive, one per point")
    if not nu > 0 or iters < 0:
        raise ConfigError("weiszfeld_nu must be positive and weiszfeld_iters non-negative")
    theta = weights @ points / weights.sum()
    path = [theta]
    for _ in range(iters):
        dist = np.linalg.norm(points - theta, axis=1)
        beta = weights / np.maximum(nu, dist)
        new = beta @ points / beta.sum()
        step = float(np.linalg.norm(new - theta))
        theta = new
        path.append(theta)
        if step < tol:
            break
    return theta, path


def geometric_median(points: Sequence[ParamVector], weights: Sequence[float],
                     nu: float = 1e-6, iters: int = 100, tol: float = 1e-8) -> ParamVector:
    """Approximate argmin_theta sum_i a_i ||theta - w_i||."""
    theta, _ = weiszfeld(stack(points), np.asarray(weights, dtype=np.float64), nu, iters, tol)
    return points[0].with_values(theta)


def rfa_aggregate(updates: Sequence[ClientUpdate], nu: float = 1e-6, iters: int = 100) -> ParamVector:
    """Geometric median of client models weighted by normalized sample counts."""
    ordered = sorted_by_client(updates)
    counts = np.array([u.sample_count for u in ordered], dtype=np.float64)
    if counts.sum() <= 0:
        raise ContractError("total sample count is zero; rfa weights are undefined")
    return geometric_median([u.params for u in ordered], counts / counts.sum(), nu, iters)


def geo_median_aggregate(updates: Sequence[ClientUpdate], nu: float = 1e-6, iters: int = 100) -> ParamVector:
    """Unweighted geometric median of client models."""
    ordered = sorted_by_client(updates)
    return geometric_median([u.params for u in ordered], np.ones(len(ordered)), nu, iters)


def slsgd_aggregate(updates: Sequence[ClientUpdate], prev_global: ParamVector,
                    beta: float, alpha: float) -> ParamVector:
    """(1 - alpha) * prev_global + alpha * trimmed_mean(updates, beta)."""
    if not 0 < alpha <= 1:
        raise ConfigError("slsgd_alpha must lie in (0, 1]")
    tm = trimmed_mean_aggregate(updates, beta)
    prev_global.check_compatible(tm)
    return tm.with_values((1 - alpha) * prev_global.values + alpha * tm.values)


def weak_dp_aggregate(updates: Sequence[ClientUpdate], global_params: ParamVector, tau: float,
                      sigma: float, rng: np.random.Generator) -> ParamVector:
    """Clip each delta to tau, FedAvg, then add N(0, sigma^2) to every coordinate."""
    if sigma < 0:
        raise ConfigError("noise_sigma must be non-negative")
    avg = fedavg_aggregate(norm_clip(updates, global_params, tau))
    if sigma == 0:
        return avg
    return avg.with_values(avg.values + rng.normal(0.0, sigma, size=avg.values.shape))


def cclip_aggregate(updates: Sequence[ClientUpdate], center: ParamVector, tau: float) -> ParamVector:
    """center + sum_i p_i * clip_tau(w_i - center), p_i the normalized sample counts."""
    if not tau > 0:
        raise ConfigError("clip_tau must be positive")
    ordered = sorted_by_client(updates)
    total = sum(u.sample_count for u in ordered)
    if total <= 0:
        raise ContractError("total sample count is zero; cclip weights are undefined")
    acc = np.zeros_like(center.values)
    for u in ordered:
        center.check_compatible(u.params)
        d = u.params.values - center.values
        norm = float(np.linalg.norm(d))
        scale = 1.0 if norm <= tau else tau / norm
        acc += (u.sample_count / total) * d * scale
    return center.with_values(center.values + acc)


def robust_lr_aggregate(updates: Sequence[ClientUpdate], prev_global: ParamVector,
                        theta: int, eta: float = 1.0) -> ParamVector:
    """Sign-vote learning rate: coordinates with fewer than ``theta`` agreeing
    delta signs move against the mean delta instead of along it."""
    if theta < 1 or not eta > 0:
        raise ConfigError("rlr_theta must be >= 1 and rlr_eta positive")
    ordered = sorted_by_client(updates)
    total = sum(u.sample_count for u in ordered)
    if total <= 0:
        raise ContractError("total sample count is zero; robust lr weights are undefined")
    deltas = stack([u.params for u in ordered]) - prev_global.values
    votes = np.sign(deltas).sum(axis=0)
    lr = np.where(np.abs(votes) >= theta, eta, -eta)
    mean_delta = np.zeros_like(prev_global.values)
    for u, d in zip(ordered, deltas):
        mean_delta += u.sample_count * d
    mean_delta /= total
    return prev_global.with_values(prev_global.values + lr * mean_delta)


def crfl_postprocess(global_params: ParamVector, tau: float, sigma: float,
                     rng: np.random.Generator) -> ParamVector:
    """Clip the global model to norm tau, then add N(0, sigma^2) per coordinate."""
    if not tau > 0 or sigma < 0:
        raise ConfigError("crfl needs clip_tau > 0 and noise_sigma >= 0")
    g = global_params.values
    norm = float(np.linalg.norm(g))
    if norm > tau:
        g = g * (tau / norm)
    if sigma > 0:
        g = g + rng.normal(0.0, sigma, size=g.shape)
    return global_params.with_values(g)
