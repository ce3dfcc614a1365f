"""Training configuration and its canonical digest."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from swfield.encoding import DEFAULT_COORDS, FourierConfig
from swfield.neural.heads import HeadConfig
from swfield.plasma import WindClass

# Hyperparameter search space of the reference study
GRID = {
    "head.kind": ("linear", "skip"),
    "head.hidden": (64, 128, 256, 512, 1024),
    "lr": (1e-5, 1e-6, 1e-7, 1e-8),
    "weight_decay": (3e-4, 1e-4, 1e-3),
    "scheduler": ("cosine", "plateau"),
    "loss": ("cross_entropy", "focal"),
    "alpha": ((0.45, 0.30, 0.15, 0.10), (0.45, 0.35, 0.10, 0.10)),
    "gamma": (2.0, 3.0),
    "sampling": ("none", "undersample"),
}

# alpha entries follow descending class frequency of the reference dataset
DEFAULT_ALPHA_ORDER = ("streamer_belt", "sector_reversal", "coronal_hole", "ejecta")

STRATEGIES = ("head-only", "finetune", "random-init")


@dataclass(frozen=True)
class TrainConfig:
    head: HeadConfig = field(default_factory=HeadConfig)
    n_bands: int = 10
    coords: tuple[str, ...] = DEFAULT_COORDS
    loss: str = "focal"
    alpha: tuple[float, ...] = (0.45, 0.30, 0.15, 0.10)
    alpha_order: tuple[str, ...] | None = DEFAULT_ALPHA_ORDER  # None: alpha is in class-index order
    gamma: float = 2.0
    lr: float = 1e-3
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    scheduler: str = "plateau"
    plateau_factor: float = 0.5
    plateau_patience: int = 3
    plateau_min_delta: float = 1e-4
    lr_min: float = 0.0
    sampling: str = "none"
    batch_size: int = 32
    epochs: int = 50
    finetune_epochs: int | None = None
    finetune_lr_scale: float = 0.1
    patience: int = 5
    min_delta: float = 1e-4
    filter_interpolated: bool = False
    random_init_scale: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.loss not in ("focal", "cross_entropy"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.sampling not in ("none", "undersample"):
            raise ValueError(f"unknown sampling strategy {self.sampling!r}")
        if self.scheduler not in ("plateau", "cosine"):
            raise ValueError(f"unknown scheduler {self.scheduler!r}")
        if len(self.alpha) != self.head.n_classes:
            raise ValueError("alpha must list one entry per class")
        if self.alpha_order is not None:
            if sorted(self.alpha_order) != sorted(c.slug for c in WindClass) or len(self.alpha) != len(WindClass):
                raise ValueError("alpha_order must name each wind class exactly once")
        if any(a <= 0 for a in self.alpha):
            raise ValueError("alpha entries must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.batch_size < 1 or self.epochs < 1 or self.patience < 1:
            raise ValueError("batch size, epochs and patience must be positive")
        if self.lr <= 0 or self.finetune_lr_scale <= 0:
            raise ValueError("learning rate and fine-tune scale must be positive")

    @property
    def fourier(self) -> FourierConfig:
        return FourierConfig(self.n_bands, tuple(self.coords))

    def class_alpha(self) -> np.ndarray:
        """Alpha re-indexed by ``WindClass`` value."""
        if self.alpha_order is None:
            return np.asarray(self.alpha, dtype=float)
        out = np.empty(len(self.alpha))
        for a, name in zip(self.alpha, self.alpha_order):
            out[int(WindClass.from_slug(name))] = a
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["coords"] = list(self.coords)
        d["alpha"] = list(self.alpha)
        d["alpha_order"] = None if self.alpha_order is None else list(self.alpha_order)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        kw = dict(d)
        if "head" in kw and isinstance(kw["head"], dict):
            head_known = {f.name for f in fields(HeadConfig)}
            bad = set(kw["head"]) - head_known
            if bad:
                raise ValueError(f"unknown head config keys: {sorted(bad)}")
            kw["head"] = HeadConfig(**kw["head"])
        for key in ("coords", "alpha", "alpha_order"):
            if kw.get(key) is not None:
                kw[key] = tuple(kw[key])
        return cls(**kw)

    def with_updates(self, updates: dict) -> "TrainConfig":
        """Apply dotted-key updates such as ``{"head.hidden": 128, "lr": 1e-4}``."""
        head_kw, top_kw = {}, {}
        for key, val in updates.items():
            if key.startswith("head."):
                head_kw[key[5:]] = val
            else:
                top_kw[key] = val
        d = self.to_dict()
        d["head"].update(head_kw)
        d.update(top_kw)
        return TrainConfig.from_dict(d)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


__all__ = ["TrainConfig", "GRID", "STRATEGIES", "DEFAULT_ALPHA_ORDER", "replace"]
