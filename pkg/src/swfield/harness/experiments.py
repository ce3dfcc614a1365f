"""Strategy comparison, content-addressed run directories and grid sweeps."""
from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from swfield.connectivity import Split
from swfield.encoding import MockBackbone
from swfield.harness.config import STRATEGIES, TrainConfig
from swfield.harness.dataset import FieldDataset
from swfield.harness.training import DivergenceError, FieldModel, TrainResult, evaluate, train

logger = logging.getLogger(__name__)


def dataset_digest(data: FieldDataset) -> str:
    """sha256 over every array that influences training."""
    h = hashlib.sha256()
    for arr in (data.image_index, data.coords, data.labels, data.timestamps, data.interp, data.image_keys):
        h.update(np.ascontiguousarray(arr).tobytes())
    h.update("|".join(s.value for s in data.split).encode())
    for arr in (data.images, data.embeddings):
        if arr is not None:
            h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def backbone_digest(backbone: MockBackbone | None) -> str:
    if backbone is None:
        return "none"
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(backbone.weight).tobytes())
    h.update(np.ascontiguousarray(backbone.bias).tobytes())
    return h.hexdigest()


def run_digest(config: TrainConfig, strategy: str, data_digest: str, bb_digest: str = "none") -> str:
    payload = json.dumps({"config": config.to_dict(), "strategy": strategy,
                          "data": data_digest, "backbone": bb_digest}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def build_model(config: TrainConfig, data: FieldDataset, backbone: MockBackbone | None) -> FieldModel:
    if backbone is not None:
        return FieldModel.build(config, backbone=backbone.copy())
    if data.embeddings is None:
        raise ValueError("need a backbone or precomputed embeddings")
    return FieldModel.build(config, embedding_dim=data.embeddings.shape[1])


def split_metrics(model: FieldModel, data: FieldDataset) -> dict:
    out = {}
    for split in (Split.VALIDATION, Split.TEST):
        part = data.for_split(split)
        if len(part):
            out[split.value] = evaluate(model, part).to_dict()
    return out


def write_run_dir(out: Path, result: TrainResult, config: TrainConfig, strategy: str,
                  data_digest: str, bb_digest: str, extra: dict | None = None,
                  metrics: dict | None = None) -> Path:
    """Persist one run. ``metrics.json`` is written last and marks completion."""
    out.mkdir(parents=True, exist_ok=True)
    resolved = {"train": config.to_dict(), "strategy": strategy, "seed": config.seed,
                "inputs": {"dataset_sha256": data_digest, "backbone_sha256": bb_digest}}
    if extra:
        resolved.update(extra)
    (out / "config.resolved").write_text(yaml.safe_dump(resolved, sort_keys=True))
    (out / "history.csv").write_text(result.history.to_csv())
    (out / "checkpoint.swhp").write_bytes(result.checkpoint())
    payload = {
        "strategy": strategy,
        "best_val_loss": result.best_val_loss,
        "stopping_epoch": result.history.stopping_epoch,
        "stages": [{"name": s.name, "first_epoch": s.first_epoch, "stop_epoch": s.stop_epoch,
                    "best_epoch": s.best_epoch, "best_val_loss": s.best_val_loss,
                    "early_stopped": s.early_stopped, "n_trainable": s.n_trainable}
                   for s in result.history.stages],
        "metrics": metrics or {},
    }
    (out / "metrics.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    return out


def run_one(config: TrainConfig, data: FieldDataset, strategy: str, out_dir: Path | None = None,
            backbone: MockBackbone | None = None, extra: dict | None = None) -> tuple[TrainResult, Path | None]:
    model = build_model(config, data, backbone)
    result = train(model, data, config, strategy)
    if out_dir is None:
        return result, None
    dd, bd = dataset_digest(data), backbone_digest(backbone)
    run = out_dir / f"run-{run_digest(config, strategy, dd, bd)}"
    write_run_dir(run, result, config, strategy, dd, bd, extra, split_metrics(result.model, data))
    return result, run


# ---------------------------------------------------------------------------
# Strategy comparison
# ---------------------------------------------------------------------------

@dataclass
class StrategyComparison:
    seeds: list[int]
    histories: dict[tuple[str, int], list]  # (strategy, seed) -> RunHistory

    def curve(self, strategy: str, seed: int, column: str = "train_loss") -> np.ndarray:
        return self.histories[(strategy, seed)].column(column)

    def epoch1_random_highest(self, seed: int) -> bool:
        first = {s: self.curve(s, seed)[0] for s in STRATEGIES if (s, seed) in self.histories}
        return first["random-init"] >= max(v for k, v in first.items() if k != "random-init")

    def finetune_beats_head_only(self, seed: int) -> bool:
        return self.curve("finetune", seed)[-1] <= self.curve("head-only", seed)[-1]

    def summary(self) -> dict:
        rows = {}
        for seed in self.seeds:
            rows[seed] = {
                "epoch1_train_loss": {s: float(self.curve(s, seed)[0]) for s in STRATEGIES},
                "final_train_loss": {s: float(self.curve(s, seed)[-1]) for s in STRATEGIES},
                "random_init_epoch1_highest": self.epoch1_random_highest(seed),
                "finetune_final_le_head_only": self.finetune_beats_head_only(seed),
            }
        return rows

    def holds(self) -> bool:
        return all(self.epoch1_random_highest(s) and self.finetune_beats_head_only(s) for s in self.seeds)

    def to_csv(self) -> str:
        """Long table aligned on epoch: seed, epoch, then train/val loss per strategy."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["seed", "epoch"] + [f"{s}_{c}" for s in STRATEGIES for c in ("train_loss", "val_loss")])
        for seed in self.seeds:
            n = max(len(self.histories[(s, seed)].records) for s in STRATEGIES)
            for e in range(n):
                row = [seed, e + 1]
                for s in STRATEGIES:
                    recs = self.histories[(s, seed)].records
                    row += [repr(recs[e].train_loss), repr(recs[e].val_loss)] if e < len(recs) else ["", ""]
                w.writerow(row)
        return buf.getvalue()


def compare_strategies(config: TrainConfig, data: FieldDataset, backbone: MockBackbone,
                       seeds=(0,), strategies=STRATEGIES) -> StrategyComparison:
    """Train every strategy from the same pretrained backbone with identical seeds and data."""
    histories = {}
    for seed in seeds:
        cfg = config.with_updates({"seed": int(seed)})
        for strategy in strategies:
            model = FieldModel.build(cfg, backbone=backbone.copy())
            histories[(strategy, int(seed))] = train(model, data, cfg, strategy).history
    return StrategyComparison([int(s) for s in seeds], histories)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

def expand_grid(grid: dict) -> list[dict]:
    keys = list(grid)
    for k in keys:
        if not isinstance(grid[k], (list, tuple)) or len(grid[k]) == 0:
            raise ValueError(f"grid entry {k!r} must be a non-empty list")
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


SWEEP_FIELDS = ("rank", "run", "status", "best_val_loss", "val_macro_f1", "stopping_epoch", "params")


@dataclass
class SweepRow:
    run: str
    params: dict
    status: str
    best_val_loss: float = float("inf")
    val_macro_f1: float = float("nan")
    stopping_epoch: int = 0
    error: str = ""


@dataclass
class SweepResult:
    rows: list[SweepRow]
    trained: list[str] = field(default_factory=list)  # runs executed in this call
    skipped: list[str] = field(default_factory=list)  # completed runs found on disk

    def ranked(self) -> list[SweepRow]:
        ok = sorted((r for r in self.rows if r.status == "ok"), key=lambda r: (r.best_val_loss, r.run))
        return ok + [r for r in self.rows if r.status != "ok"]

    def to_csv(self) -> str:
        return ranked_csv(self.ranked())


def ranked_csv(rows: list[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_FIELDS)
    for i, r in enumerate(rows, 1):
        w.writerow([i if r.status == "ok" else "", r.run, r.status, repr(r.best_val_loss),
                    repr(r.val_macro_f1), r.stopping_epoch, json.dumps(r.params, sort_keys=True)])
    return buf.getvalue()


def _row_from_dir(run_dir: Path, params: dict) -> SweepRow:
    payload = json.loads((run_dir / "metrics.json").read_text())
    f1 = payload.get("metrics", {}).get("validation", {}).get("macro_f1", float("nan"))
    return SweepRow(run_dir.name, params, "ok", payload["best_val_loss"], f1, payload["stopping_epoch"])


def sweep(grid: dict, base: TrainConfig, data: FieldDataset, out_dir: str | Path,
          strategy: str = "head-only", backbone: MockBackbone | None = None,
          stop_after: int | None = None) -> SweepResult:
    """Train every grid cell, skipping cells whose run directory is already complete.

    Cells are addressed by a digest of (resolved config, strategy, data,
    backbone), so an interrupted sweep resumes where it stopped. A cell that
    raises is recorded as failed and the sweep moves on. ``stop_after``
    simulates an interruption after that many trained cells.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dd, bd = dataset_digest(data), backbone_digest(backbone)
    result = SweepResult([])
    for params in expand_grid(grid):
        try:
            cfg = base.with_updates(params)
        except (TypeError, ValueError) as exc:
            result.rows.append(SweepRow("invalid", params, "failed", error=str(exc)))
            continue
        run = out_dir / f"run-{run_digest(cfg, strategy, dd, bd)}"
        if (run / "metrics.json").exists():
            result.rows.append(_row_from_dir(run, params))
            result.skipped.append(run.name)
            continue
        if stop_after is not None and len(result.trained) >= stop_after:
            raise KeyboardInterrupt(f"sweep interrupted after {stop_after} cells")
        try:
            model = build_model(cfg, data, backbone)
            res = train(model, data, cfg, strategy)
        except (DivergenceError, ValueError, FloatingPointError) as exc:
            logger.warning("cell %s failed: %s", run.name, exc)
            run.mkdir(parents=True, exist_ok=True)
            (run / "failure.json").write_text(json.dumps({"params": params, "error": str(exc)}, indent=2))
            result.rows.append(SweepRow(run.name, params, "failed", error=str(exc)))
            result.trained.append(run.name)
            continue
        write_run_dir(run, res, cfg, strategy, dd, bd, {"sweep_params": params},
                      split_metrics(res.model, data))
        result.rows.append(_row_from_dir(run, params))
        result.trained.append(run.name)
    (out_dir / "sweep.csv").write_text(result.to_csv())
    return result


def collect_runs(sweep_dir: str | Path) -> list[SweepRow]:
    """Ranked rows for every run directory under ``sweep_dir``."""
    rows = []
    for run in sorted(Path(sweep_dir).glob("run-*")):
        resolved = yaml.safe_load((run / "config.resolved").read_text()) if (run / "config.resolved").exists() else {}
        params = resolved.get("sweep_params", {}) if resolved else {}
        if (run / "metrics.json").exists():
            rows.append(_row_from_dir(run, params))
        elif (run / "failure.json").exists():
            fail = json.loads((run / "failure.json").read_text())
            rows.append(SweepRow(run.name, fail.get("params", {}), "failed", error=fail.get("error", "")))
    return SweepResult(rows).ranked()


__all__ = ["compare_strategies", "StrategyComparison", "sweep", "SweepResult", "SweepRow", "expand_grid",
           "write_run_dir", "run_one", "run_digest", "dataset_digest", "backbone_digest", "collect_runs",
           "ranked_csv", "build_model", "split_metrics"]
