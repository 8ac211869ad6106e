"""Closed-form logit gradients and the finite-difference oracle.

All kernels return the full length-V gradient vector with respect to the
logits of a softmax distribution. Because every quantity here is a function
of the probabilities alone, each returned vector sums to zero (softmax
gradients live in the zero-sum tangent space).
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np


def _check_target(dist: np.ndarray, target: int) -> None:
    if not 0 <= target < dist.size:
        raise ValueError(f"target token {target} out of range for V={dist.size}")


def grad_log_prob(dist: np.ndarray, target: int) -> np.ndarray:
    """d log p[target] / d z_k = delta(k, target) - p[k]."""
    p = np.asarray(dist, dtype=np.float64)
    _check_target(p, target)
    dz = -p.copy()
    dz[target] += 1.0
    return dz


def grad_prob(dist: np.ndarray, target: int) -> np.ndarray:
    """d p[target] / d z_k = p[target] * (delta(k, target) - p[k]).

    Off-target entries are -p[target]*p[k]: mass removed from the target
    redistributes in proportion to each competitor's current probability.
    """
    p = np.asarray(dist, dtype=np.float64)
    _check_target(p, target)
    return p[target] * grad_log_prob(p, target)


def grad_support_mass(dist: np.ndarray, anchor_set: Iterable[int]) -> np.ndarray:
    """Gradient of the total mass on ``anchor_set`` w.r.t. the logits.

    With P_safe = sum of p over the set: in-set entries get p[k]*(1 - P_safe),
    out-of-set entries get -p[k]*P_safe (softmax coupling).
    """
    p = np.asarray(dist, dtype=np.float64)
    members = sorted(set(int(k) for k in anchor_set))
    if not members:
        raise ValueError("anchor_set must be nonempty")
    if members[0] < 0 or members[-1] >= p.size:
        raise ValueError(f"anchor_set contains tokens outside [0, {p.size})")
    mask = np.zeros(p.size, dtype=bool)
    mask[members] = True
    p_safe = float(p[mask].sum())
    dz = np.where(mask, p * (1.0 - p_safe), -p * p_safe)
    return dz


def finite_diff(
    loss: Callable[[np.ndarray], float],
    logits: np.ndarray,
    h: float = 1e-5,
) -> np.ndarray:
    """Central-difference gradient of a scalar loss over a logit vector."""
    if h <= 0.0:
        raise ValueError(f"step size must be positive, got {h}")
    z = np.asarray(logits, dtype=np.float64)
    grad = np.empty_like(z)
    for k in range(z.size):
        zp = z.copy()
        zm = z.copy()
        zp[k] += h
        zm[k] -= h
        fp = float(loss(zp))
        fm = float(loss(zm))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"loss returned non-finite value near coordinate {k}")
        grad[k] = (fp - fm) / (2.0 * h)
    return grad


def max_relative_error(
    analytic: np.ndarray,
    numeric: np.ndarray,
    floor: float = 1e-4,
) -> float:
    """Max relative error, comparing only entries with magnitude above ``floor``.

    The floor reflects the oracle's resolution: central differences at
    h=1e-5 in double precision carry ~1e-11 of cancellation noise, so only
    entries above ~1e-4 can be held to a 1e-6 relative bound.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.abs(a), np.abs(n))
    keep = scale > floor
    if not np.any(keep):
        return 0.0
    return float(np.max(np.abs(a[keep] - n[keep]) / scale[keep]))
