"""Layered run configuration shared by the command-line subcommands."""
from __future__ import annotations

import copy
import re
from dataclasses import fields
from pathlib import Path

import yaml

from swfield.connectivity import BackmapParams, SplitRules
from swfield.harness.config import TrainConfig
from swfield.neural.heads import HeadConfig
from swfield.plasma import LabelConfig


class ConfigError(ValueError):
    pass


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads ``1e-3`` (no dot) as a float, as YAML 1.2 does."""


_Loader.yaml_implicit_resolvers = {k: [r for r in v if r[0] != "tag:yaml.org,2002:float"]
                                   for k, v in yaml.SafeLoader.yaml_implicit_resolvers.items()}
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
                   |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
                   |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
                   |[-+]?\.(?:inf|Inf|INF)
                   |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."),
)


def load_yaml(text: str):
    return yaml.load(text, Loader=_Loader)


_train_defaults = TrainConfig()
_head_defaults = HeadConfig()

DEFAULTS: dict = {
    "seed": 0,
    "plasma": {"cadence_s": 60.0, "max_gap_s": 3600.0, "labeling": "xu2015"},
    "connectivity": {
        "rotation_period_days": BackmapParams().rotation_period_days,
        "source_surface_au": BackmapParams().source_surface_au,
        "pair_tolerance_s": 720.0,
    },
    "splits": SplitRules().to_dict(),
    "encoding": {"n_bands": _train_defaults.n_bands, "coords": list(_train_defaults.coords),
                 "embedding_dim": 128, "patch": 8},
    "head": {f.name: getattr(_head_defaults, f.name) for f in fields(HeadConfig) if f.name != "n_classes"},
    "loss": {"kind": _train_defaults.loss, "alpha": list(_train_defaults.alpha),
             "alpha_order": list(_train_defaults.alpha_order), "gamma": _train_defaults.gamma},
    "optimizer": {"lr": _train_defaults.lr, "weight_decay": _train_defaults.weight_decay,
                  "beta1": _train_defaults.beta1, "beta2": _train_defaults.beta2, "eps": _train_defaults.eps},
    "scheduler": {"kind": _train_defaults.scheduler, "plateau_factor": _train_defaults.plateau_factor,
                  "plateau_patience": _train_defaults.plateau_patience,
                  "plateau_min_delta": _train_defaults.plateau_min_delta, "lr_min": _train_defaults.lr_min},
    "sampling": {"strategy": _train_defaults.sampling},
    "training": {
        "strategy": "finetune",
        "batch_size": _train_defaults.batch_size,
        "epochs": _train_defaults.epochs,
        "finetune_epochs": _train_defaults.finetune_epochs,
        "finetune_lr_scale": _train_defaults.finetune_lr_scale,
        "patience": _train_defaults.patience,
        "min_delta": _train_defaults.min_delta,
        "filter_interpolated": _train_defaults.filter_interpolated,
        "random_init_scale": _train_defaults.random_init_scale,
    },
    "synth": {},  # SynthConfig field overrides
    "sweep": {"strategy": "head-only", "grid": {"head.kind": ["linear", "skip"], "loss": ["focal", "cross_entropy"]}},
    "paths": {"data": "data", "runs": "runs"},
}

# sections whose contents are checked elsewhere
_FREE_SECTIONS = {"synth", "sweep", "splits"}


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        path = f"{where}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(base[key], dict) and key not in _FREE_SECTIONS and not where:
            if not isinstance(val, dict):
                raise ConfigError(f"section {path!r} must be a mapping")
            out[key] = _merge(base[key], val, f"{path}.")
        elif isinstance(base[key], dict) and key in _FREE_SECTIONS:
            if not isinstance(val, dict):
                raise ConfigError(f"section {path!r} must be a mapping")
            out[key] = {**base[key], **val}
        else:
            out[key] = val
    return out


def parse_set(item: str) -> tuple[list[str], object]:
    if "=" not in item:
        raise ConfigError(f"--set expects section.key=value, got {item!r}")
    key, text = item.split("=", 1)
    try:
        val = load_yaml(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value in {item!r}: {exc}") from None
    parts = key.strip().split(".")
    if not all(parts):
        raise ConfigError(f"malformed key in {item!r}")
    return parts, val


def _nest(parts: list[str], val) -> dict:
    out = val
    for p in reversed(parts):
        out = {p: out}
    return out


def resolve(path: str | Path | None = None, sets=(), seed: int | None = None) -> dict:
    """Defaults, then the YAML file, then ``--set`` overrides, then ``--seed``."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        text = Path(path).read_text()
        try:
            loaded = load_yaml(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {path}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must be a mapping")
        cfg = _merge(cfg, loaded)
    for item in sets:
        parts, val = parse_set(item)
        if parts[0] == "sweep" and len(parts) > 2 and parts[1] == "grid":
            # grid keys are themselves dotted, e.g. sweep.grid.head.hidden=[64,128]
            cfg["sweep"]["grid"]["".join(p + "." for p in parts[2:])[:-1]] = val
            continue
        cfg = _merge(cfg, _nest(parts, val))
    if seed is not None:
        cfg["seed"] = int(seed)
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    try:
        train_config(cfg)
        split_rules(cfg)
        backmap_params(cfg)
        synth_config(cfg)
        label_config(cfg)
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError, FileNotFoundError) as exc:
        raise ConfigError(str(exc)) from None
    if cfg["training"]["strategy"] not in ("head-only", "finetune", "random-init"):
        raise ConfigError(f"unknown strategy {cfg['training']['strategy']!r}")
    if not isinstance(cfg["sweep"].get("grid", {}), dict):
        raise ConfigError("sweep.grid must be a mapping")
    unknown = set(cfg["sweep"]) - {"strategy", "grid"}
    if unknown:
        raise ConfigError(f"unknown sweep keys: {sorted(unknown)}")
    sweep_grid(cfg)


# config-file spellings of TrainConfig fields, for sweep grids
_SECTION_KEYS = {"loss.kind": "loss", "scheduler.kind": "scheduler", "sampling.strategy": "sampling",
                 "encoding.n_bands": "n_bands", "encoding.coords": "coords"}
_FLAT_SECTIONS = ("optimizer.", "scheduler.", "loss.", "training.")


def grid_key(key: str) -> str:
    if key in _SECTION_KEYS:
        return _SECTION_KEYS[key]
    if key.startswith("head."):
        return key
    for prefix in _FLAT_SECTIONS:
        if key.startswith(prefix):
            return key[len(prefix):]
    return key


def sweep_grid(cfg: dict) -> dict:
    """The sweep grid with keys mapped onto TrainConfig fields; unknown keys are errors."""
    head = {f.name for f in fields(HeadConfig)}
    top = {f.name for f in fields(TrainConfig)}
    out = {}
    for key, values in cfg["sweep"].get("grid", {}).items():
        k = grid_key(key)
        ok = k[5:] in head if k.startswith("head.") else (k in top and k not in ("head", "seed"))
        if not ok:
            raise ConfigError(f"unknown sweep grid key {key!r}")
        if not isinstance(values, list) or not values:
            raise ConfigError(f"sweep grid entry {key!r} must be a non-empty list")
        out[k] = values
    return out


def train_config(cfg: dict) -> TrainConfig:
    t, o, s, l = cfg["training"], cfg["optimizer"], cfg["scheduler"], cfg["loss"]
    return TrainConfig(
        head=HeadConfig(**cfg["head"]),
        n_bands=int(cfg["encoding"]["n_bands"]),
        coords=tuple(cfg["encoding"]["coords"]),
        loss=l["kind"], alpha=tuple(float(a) for a in l["alpha"]),
        alpha_order=None if l["alpha_order"] is None else tuple(l["alpha_order"]),
        gamma=float(l["gamma"]),
        lr=float(o["lr"]), weight_decay=float(o["weight_decay"]), beta1=float(o["beta1"]),
        beta2=float(o["beta2"]), eps=float(o["eps"]),
        scheduler=s["kind"], plateau_factor=float(s["plateau_factor"]),
        plateau_patience=int(s["plateau_patience"]), plateau_min_delta=float(s["plateau_min_delta"]),
        lr_min=float(s["lr_min"]),
        sampling=cfg["sampling"]["strategy"],
        batch_size=int(t["batch_size"]), epochs=int(t["epochs"]),
        finetune_epochs=None if t["finetune_epochs"] is None else int(t["finetune_epochs"]),
        finetune_lr_scale=float(t["finetune_lr_scale"]),
        patience=int(t["patience"]), min_delta=float(t["min_delta"]),
        filter_interpolated=bool(t["filter_interpolated"]),
        random_init_scale=float(t["random_init_scale"]),
        seed=int(cfg["seed"]),
    )


def split_rules(cfg: dict) -> SplitRules:
    return SplitRules.from_dict(cfg["splits"])


def backmap_params(cfg: dict) -> BackmapParams:
    c = cfg["connectivity"]
    return BackmapParams(float(c["rotation_period_days"]), float(c["source_surface_au"]))


def label_config(cfg: dict) -> LabelConfig:
    name = cfg["plasma"]["labeling"]
    if name in ("xu2015", "fixture"):
        return LabelConfig.builtin(name)
    return LabelConfig.load(name)


def synth_config(cfg: dict):
    from swfield.synth import SynthConfig

    known = {f.name for f in fields(SynthConfig)}
    over = dict(cfg["synth"])
    unknown = set(over) - known
    if unknown:
        raise ConfigError(f"unknown synth keys: {sorted(unknown)}")
    for k, v in over.items():
        if isinstance(v, list):
            over[k] = tuple(tuple(x) if isinstance(x, list) else x for x in v)
    over["seed"] = int(cfg["seed"])
    return SynthConfig(**over)


def dump(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=True)


__all__ = ["ConfigError", "DEFAULTS", "resolve", "train_config", "split_rules", "backmap_params",
           "label_config", "synth_config", "dump", "parse_set", "sweep_grid", "grid_key"]
