"""Classification heads with explicit forward/backward passes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TABLE2_WIDTHS = (64, 128, 256, 512, 1024)


class HeadConfigError(ValueError):
    pass


@dataclass(frozen=True)
class HeadConfig:
    """``kind`` is ``"linear"`` (widths h, h/2, h/4) or ``"skip"`` (n_layers of width h).

    For the skip head the original input is concatenated to the hidden
    activation before 1-based layers k+1, 2k+1, ... (never the first).
    """

    kind: str = "linear"
    hidden: int = 256
    n_layers: int = 4
    skip_every: int = 2
    dropout: float = 0.1
    n_classes: int = 4

    def __post_init__(self):
        if self.kind not in ("linear", "skip"):
            raise HeadConfigError(f"unknown head kind {self.kind!r}")
        if self.hidden < 1:
            raise HeadConfigError("hidden size must be positive")
        if self.kind == "linear" and self.hidden % 4:
            raise HeadConfigError("linear head needs a hidden size divisible by 4")
        if self.kind == "skip":
            if self.skip_every < 1:
                raise HeadConfigError("skip interval k must be >= 1")
            if self.n_layers < 1:
                raise HeadConfigError("skip head needs at least one layer")
        if not 0.0 <= self.dropout < 1.0:
            raise HeadConfigError("dropout must lie in [0, 1)")

    def hidden_widths(self) -> list[int]:
        if self.kind == "linear":
            return [self.hidden, self.hidden // 2, self.hidden // 4]
        return [self.hidden] * self.n_layers

    def skip_layers(self) -> list[int]:
        """0-based indices of hidden layers that receive the re-injected input."""
        if self.kind != "skip":
            return []
        return [i for i in range(1, self.n_layers) if i % self.skip_every == 0]

    def layer_shapes(self, in_dim: int) -> list[tuple[int, int]]:
        widths = self.hidden_widths()
        skips = set(self.skip_layers())
        shapes = []
        prev = in_dim
        for i, w in enumerate(widths):
            fan_in = prev + (in_dim if i in skips else 0)
            shapes.append((fan_in, w))
            prev = w
        shapes.append((prev, self.n_classes))
        return shapes


def init_head(config: HeadConfig, in_dim: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """He-normal weights for hidden layers, scaled normal for the output, zero biases."""
    params = {}
    shapes = config.layer_shapes(in_dim)
    for i, (fan_in, fan_out) in enumerate(shapes):
        gain = 2.0 if i < len(shapes) - 1 else 1.0
        params[f"W{i}"] = rng.normal(0.0, np.sqrt(gain / fan_in), size=(fan_in, fan_out))
        params[f"b{i}"] = np.zeros(fan_out)
    return params


def check_params(config: HeadConfig, params: dict, in_dim: int) -> None:
    for i, (fan_in, fan_out) in enumerate(config.layer_shapes(in_dim)):
        if params[f"W{i}"].shape != (fan_in, fan_out) or params[f"b{i}"].shape != (fan_out,):
            raise HeadConfigError(f"layer {i} shape does not chain from input dim {in_dim}")


def dropout_masks(config: HeadConfig, batch: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Inverted-dropout masks (0 or 1/(1-p)) for each hidden layer."""
    p = config.dropout
    if p == 0.0:
        return [np.ones((batch, w)) for w in config.hidden_widths()]
    return [(rng.random((batch, w)) >= p) / (1.0 - p) for w in config.hidden_widths()]


def head_forward(config: HeadConfig, params: dict, x, *, train: bool = False,
                 rng: np.random.Generator | None = None, masks=None):
    """Return ``(logits, cache)``. Dropout is active only when ``train`` is True."""
    x = np.asarray(x)
    widths = config.hidden_widths()
    skips = set(config.skip_layers())
    if train and masks is None:
        if rng is None:
            raise ValueError("training mode needs an rng or explicit dropout masks")
        masks = dropout_masks(config, x.shape[0], rng)
    inputs, pres, used_masks = [], [], []
    h = x
    for i in range(len(widths)):
        inp = np.concatenate([h, x], axis=1) if i in skips else h
        pre = inp @ params[f"W{i}"] + params[f"b{i}"]
        h = np.maximum(pre, 0.0)
        if train:
            h = h * masks[i]
            used_masks.append(masks[i])
        inputs.append(inp)
        pres.append(pre)
    out = len(widths)
    logits = h @ params[f"W{out}"] + params[f"b{out}"]
    cache = {"x": x, "inputs": inputs, "pres": pres, "masks": used_masks if train else None, "last": h}
    return logits, cache


def head_backward(config: HeadConfig, params: dict, cache: dict, grad_logits):
    """Return ``(grads, grad_x)`` for dL/dlogits ``grad_logits``."""
    widths = config.hidden_widths()
    skips = set(config.skip_layers())
    out = len(widths)
    grads = {
        f"W{out}": cache["last"].T @ grad_logits,
        f"b{out}": grad_logits.sum(axis=0),
    }
    g = grad_logits @ params[f"W{out}"].T
    grad_x = np.zeros_like(cache["x"], dtype=float)
    for i in range(len(widths) - 1, -1, -1):
        if cache["masks"] is not None:
            g = g * cache["masks"][i]
        g = g * (cache["pres"][i] > 0)
        grads[f"W{i}"] = cache["inputs"][i].T @ g
        grads[f"b{i}"] = g.sum(axis=0)
        g_in = g @ params[f"W{i}"].T
        if i in skips:
            h_dim = widths[i - 1]
            grad_x += g_in[:, h_dim:]
            g = g_in[:, :h_dim]
        else:
            g = g_in
    grad_x += g
    return grads, grad_x
