"""Softmax-based losses returning the mean loss and its gradient w.r.t. logits."""
from __future__ import annotations

import numpy as np


def log_softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(z) -> np.ndarray:
    return np.exp(log_softmax(z))


def _check_targets(targets, n_classes: int) -> np.ndarray:
    t = np.asarray(targets)
    if t.dtype.kind not in "iu" or np.any((t < 0) | (t >= n_classes)):
        raise ValueError(f"targets must be integers in [0, {n_classes})")
    return t.astype(np.int64)


def focal_loss(logits, targets, alpha, gamma: float = 2.0):
    """Mean of ``-alpha_t (1 - p_t)^gamma log p_t`` and its gradient.

    ``alpha`` is a per-class weight vector. With ``gamma = 0`` and unit
    ``alpha`` this is ordinary cross-entropy.
    """
    z = np.asarray(logits, dtype=float)
    n, k = z.shape
    t = _check_targets(targets, k)
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (k,) or np.any(alpha <= 0):
        raise ValueError("alpha must be a positive vector with one weight per class")
    if gamma < 0:
        raise ValueError("gamma must be non-negative")

    logp = log_softmax(z)
    p = np.exp(logp)
    rows = np.arange(n)
    logpt = logp[rows, t]
    pt = p[rows, t]
    a = alpha[t]
    q = 1.0 - pt
    mod = q ** gamma
    loss = -a * mod * logpt

    # dL/dz_j = a [gamma q^(gamma-1) p_t log p_t - q^gamma] (delta_jt - p_j)
    if gamma == 0:
        coeff = -a
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            focal_term = gamma * q ** (gamma - 1.0) * pt * logpt
        focal_term = np.where(q > 0, focal_term, 0.0)
        coeff = a * (focal_term - mod)
    onehot = np.zeros_like(p)
    onehot[rows, t] = 1.0
    grad = coeff[:, None] * (onehot - p) / n
    return float(loss.mean()), grad


def cross_entropy(logits, targets, weights=None):
    """Mean (optionally class-weighted per sample) cross-entropy and its gradient."""
    z = np.asarray(logits, dtype=float)
    n, k = z.shape
    t = _check_targets(targets, k)
    logp = log_softmax(z)
    rows = np.arange(n)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)[t]
    loss = -(w * logp[rows, t]).mean()
    grad = np.exp(logp)
    grad[rows, t] -= 1.0
    return float(loss), grad * w[:, None] / n
