"""Adam with decoupled weight decay, plus plateau and cosine learning-rate schedules."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> tuple[dict, AdamState]:
    """One in-place Adam update of every entry of ``grads``.

    Parameters without a gradient entry are left untouched (frozen). Weight
    decay is decoupled: ``p -= lr * wd * p`` before the moment update.
    """
    if state.lr <= 0:
        raise ValueError("learning rate must be positive")
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape for {name!r}")
        if not np.isfinite(g).all():
            bad = int((~np.isfinite(g)).sum())
            raise NonFiniteGradientError(
                f"{bad} non-finite gradient entries in {name!r} at step {state.t + 1}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, g in grads.items():
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        if state.weight_decay:
            p -= state.lr * state.weight_decay * p
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


class PlateauScheduler:
    """Multiply the rate by ``factor`` once ``patience`` epochs pass without improvement.

    An epoch improves when its loss is below the best so far by more than
    ``min_delta``. The bad-epoch counter resets after each reduction.
    """

    def __init__(self, lr: float, factor: float = 0.5, patience: int = 3,
                 min_delta: float = 1e-4, min_lr: float = 0.0):
        if not 0.0 < factor < 1.0:
            raise ValueError("factor must lie in (0, 1)")
        if patience < 1:
            raise ValueError("patience must be >= 1")
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.min_delta = min_delta
        self.min_lr = min_lr
        self.best = math.inf
        self.bad_epochs = 0

    def step(self, val_loss: float) -> float:
        if val_loss < self.best - self.min_delta:
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.bad_epochs = 0
        return self.lr


class CosineScheduler:
    """Closed-form ``lr_min + (lr_max - lr_min)(1 + cos(pi t / T)) / 2``, t clamped to T."""

    def __init__(self, lr_max: float, total: int, lr_min: float = 0.0):
        if total < 1:
            raise ValueError("cosine period must be >= 1")
        self.lr_max = lr_max
        self.lr_min = lr_min
        self.total = total
        self.lr = lr_max

    def at(self, t: float) -> float:
        t = min(max(t, 0.0), self.total)
        return self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + math.cos(math.pi * t / self.total))

    def step(self, epoch: float) -> float:
        self.lr = self.at(epoch)
        return self.lr


def make_scheduler(kind: str, lr: float, *, total: int = 50, factor: float = 0.5,
                   patience: int = 3, min_delta: float = 1e-4, lr_min: float = 0.0):
    if kind == "plateau":
        return PlateauScheduler(lr, factor, patience, min_delta)
    if kind == "cosine":
        return CosineScheduler(lr, total, lr_min)
    raise ValueError(f"unknown scheduler {kind!r}")


def scheduler_step(scheduler, signal: float) -> float:
    """Advance a scheduler: validation loss for plateau, epoch index for cosine."""
    return scheduler.step(signal)
