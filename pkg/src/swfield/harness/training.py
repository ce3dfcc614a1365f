"""Two-stage training of backbone + classification head with early stopping."""
from __future__ import annotations

import csv
import io
import logging
import math
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from swfield.connectivity import Split
from swfield.encoding import MockBackbone, encode_coords, normalize_coords
from swfield.harness.config import STRATEGIES, TrainConfig
from swfield.harness.dataset import FieldDataset, undersample
from swfield.harness.metrics import Metrics
from swfield.neural.checkpoint import dumps_checkpoint, loads_checkpoint
from swfield.neural.heads import HeadConfig, check_params, head_backward, head_forward, init_head
from swfield.neural.losses import cross_entropy, focal_loss
from swfield.neural.optim import AdamState, NonFiniteGradientError, adam_step, make_scheduler

logger = logging.getLogger(__name__)

EVAL_CHUNK = 4096


class DivergenceError(FloatingPointError):
    """Non-finite loss or gradient; ``history`` holds the epochs completed so far."""

    def __init__(self, message: str, history: "RunHistory"):
        super().__init__(message)
        self.history = history


def rng_for(seed: int, stream: str) -> np.random.Generator:
    """Independent generator per named stream, fixed by ``seed``."""
    return np.random.default_rng([int(seed), zlib.crc32(stream.encode())])


@dataclass
class FieldModel:
    """Optional mock backbone plus a classification head over ``[embedding | gamma(coords)]``."""

    head_config: HeadConfig
    config: TrainConfig
    head: dict[str, np.ndarray]
    embedding_dim: int
    backbone: MockBackbone | None = None

    @classmethod
    def build(cls, config: TrainConfig, *, backbone: MockBackbone | None = None,
              embedding_dim: int | None = None) -> "FieldModel":
        if backbone is not None:
            embedding_dim = backbone.dim
        if embedding_dim is None:
            raise ValueError("need a backbone or an embedding dimension")
        in_dim = config.fourier.feature_dim(embedding_dim)
        head = init_head(config.head, in_dim, rng_for(config.seed, "head-init"))
        return cls(config.head, config, head, embedding_dim, backbone)

    @property
    def in_dim(self) -> int:
        return self.config.fourier.feature_dim(self.embedding_dim)

    def params(self) -> dict[str, np.ndarray]:
        flat = {f"head.{k}": v for k, v in self.head.items()}
        if self.backbone is not None:
            flat.update({f"backbone.{k}": v for k, v in self.backbone.params().items()})
        return flat

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params().items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for k, v in self.params().items():
            np.copyto(v, snap[k])

    def copy(self) -> "FieldModel":
        bb = self.backbone.copy() if self.backbone is not None else None
        return FieldModel(self.head_config, self.config, {k: v.copy() for k, v in self.head.items()},
                          self.embedding_dim, bb)

    def to_checkpoint(self) -> bytes:
        digest = bytes.fromhex(self.config.digest())
        return dumps_checkpoint(self.params(), digest)

    def load_checkpoint(self, data: bytes) -> None:
        tensors, _ = loads_checkpoint(data)
        for k, v in self.params().items():
            if k not in tensors or tensors[k].shape != v.shape:
                raise ValueError(f"checkpoint missing or mis-shaped tensor {k!r}")
            np.copyto(v, tensors[k])

    # -- inference -----------------------------------------------------------

    def embedding_table(self, data: FieldDataset) -> np.ndarray:
        """Embedding of every image in ``data`` (n_img, D)."""
        if self.backbone is not None:
            if data.images is None:
                raise ValueError("model has a backbone but the dataset has no images")
            return self.backbone.forward_pooled(data.pooled(self.backbone.patch))
        if data.embeddings is None:
            raise ValueError("dataset carries neither images nor embeddings")
        if data.embeddings.shape[1] != self.embedding_dim:
            raise ValueError("embedding dimension does not match the model")
        return np.asarray(data.embeddings, dtype=float)

    def encoded_coords(self, data: FieldDataset) -> np.ndarray:
        f = self.config.fourier
        if not f.coords:
            return np.zeros((len(data), 0))
        return encode_coords(normalize_coords(data.coords, f.coords), f.n_bands)

    def logits(self, data: FieldDataset) -> np.ndarray:
        table = self.embedding_table(data)
        enc = self.encoded_coords(data)
        out = np.empty((len(data), self.head_config.n_classes))
        for s in range(0, len(data), EVAL_CHUNK):
            sl = slice(s, s + EVAL_CHUNK)
            x = np.concatenate([table[data.image_index[sl]], enc[sl]], axis=1)
            out[sl] = head_forward(self.head_config, self.head, x)[0]
        return out

    def predict(self, data: FieldDataset) -> np.ndarray:
        return self.logits(data).argmax(axis=1)

    def features(self, data: FieldDataset) -> np.ndarray:
        """Full head input ``[embedding | gamma(coords)]`` per example."""
        return np.concatenate([self.embedding_table(data)[data.image_index],
                               self.encoded_coords(data)], axis=1)


@dataclass
class EpochRecord:
    epoch: int
    stage: str
    train_loss: float
    val_loss: float
    lr: float
    wall_time: float = 0.0


@dataclass
class StageInfo:
    name: str
    trainable: list[str]
    n_trainable: int
    first_epoch: int
    stop_epoch: int = 0
    best_epoch: int = 0
    best_val_loss: float = math.inf
    early_stopped: bool = False


@dataclass
class RunHistory:
    records: list[EpochRecord] = field(default_factory=list)
    stages: list[StageInfo] = field(default_factory=list)

    @property
    def stopping_epoch(self) -> int:
        return self.records[-1].epoch if self.records else 0

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "stage", "train_loss", "val_loss", "lr"])
        for r in self.records:
            w.writerow([r.epoch, r.stage, repr(r.train_loss), repr(r.val_loss), repr(r.lr)])
        return buf.getvalue()


@dataclass
class TrainResult:
    model: FieldModel
    history: RunHistory
    strategy: str
    best_val_loss: float

    def checkpoint(self) -> bytes:
        return self.model.to_checkpoint()


def make_loss(config: TrainConfig):
    if config.loss == "focal":
        alpha = config.class_alpha()
        return lambda z, y: focal_loss(z, y, alpha, config.gamma)
    return lambda z, y: cross_entropy(z, y)


def dataset_loss(model: FieldModel, data: FieldDataset, loss_fn) -> float:
    """Evaluation-mode mean loss over ``data``, accumulated in a fixed chunk order."""
    logits = model.logits(data)
    total = 0.0
    for s in range(0, len(data), EVAL_CHUNK):
        z = logits[s:s + EVAL_CHUNK]
        total += loss_fn(z, data.labels[s:s + EVAL_CHUNK])[0] * len(z)
    return total / len(data)


def _stage_plan(strategy: str) -> list[tuple[str, bool]]:
    return {
        "head-only": [("transfer", False)],
        "finetune": [("transfer", False), ("finetune", True)],
        "random-init": [("scratch", True)],
    }[strategy]


def train(model: FieldModel, data: FieldDataset, config: TrainConfig | None = None,
          strategy: str = "finetune", *, train_split: Split = Split.TRAIN,
          val_split: Split = Split.VALIDATION, verbose: bool = False) -> TrainResult:
    """Train ``model`` in place following ``strategy``.

    ``head-only`` keeps the backbone frozen; ``finetune`` trains the head with
    a frozen backbone until early stopping, then restarts from the best
    checkpoint with every parameter trainable and a fresh optimizer;
    ``random-init`` re-draws the backbone weights and trains everything.
    Each stage keeps the parameters with the lowest validation loss.
    """
    config = config or model.config
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    if strategy != "head-only" and model.backbone is None:
        raise ValueError(f"strategy {strategy!r} needs a trainable backbone")

    tr = data.for_split(train_split)
    va = data.for_split(val_split)
    if config.filter_interpolated:
        tr = tr.subset(~tr.interp)
        va = va.subset(~va.interp)
    if config.sampling == "undersample":
        tr = tr.subset(undersample(tr.labels, config.seed, config.head.n_classes))
    if len(tr) == 0 or len(va) == 0:
        raise ValueError("training and validation splits must be non-empty")

    if strategy == "random-init":
        fresh = MockBackbone.random(rng_for(config.seed, "backbone-init").integers(2**31),
                                    config.random_init_scale, image_shape=model.backbone.image_shape,
                                    patch=model.backbone.patch, dim=model.backbone.dim)
        np.copyto(model.backbone.weight, fresh.weight)
        np.copyto(model.backbone.bias, fresh.bias)

    loss_fn = make_loss(config)
    shuffle_rng = rng_for(config.seed, "shuffle")
    dropout_rng = rng_for(config.seed, "dropout")
    history = RunHistory()
    enc = model.encoded_coords(tr)
    pooled = tr.pooled(model.backbone.patch) if model.backbone is not None else None
    D = model.embedding_dim
    best_overall = math.inf

    for stage_idx, (stage, backbone_trainable) in enumerate(_stage_plan(strategy)):
        flat = model.params()
        trainable = [k for k in flat if k.startswith("head.") or backbone_trainable]
        info = StageInfo(stage, trainable, int(sum(flat[k].size for k in trainable)),
                         first_epoch=history.stopping_epoch + 1)
        history.stages.append(info)
        lr0 = config.lr if stage_idx == 0 else config.lr * config.finetune_lr_scale
        opt = AdamState(lr=lr0, beta1=config.beta1, beta2=config.beta2, eps=config.eps,
                        weight_decay=config.weight_decay)
        budget = config.epochs if stage_idx == 0 else (config.finetune_epochs or config.epochs)
        sched = make_scheduler(config.scheduler, lr0, total=budget,
                               factor=config.plateau_factor, patience=config.plateau_patience,
                               min_delta=config.plateau_min_delta, lr_min=config.lr_min)
        best_snap = model.snapshot()
        ref, bad = math.inf, 0

        for e in range(budget):
            t0 = time.perf_counter()
            epoch = history.stopping_epoch + 1
            lr_used = opt.lr
            table = None if backbone_trainable else model.embedding_table(tr)
            order = shuffle_rng.permutation(len(tr))
            total = 0.0
            for s in range(0, len(order), config.batch_size):
                b = order[s:s + config.batch_size]
                img = tr.image_index[b]
                if backbone_trainable:
                    pb = pooled[img]
                    emb = model.backbone.forward_pooled(pb)
                else:
                    emb = table[img]
                x = np.concatenate([emb, enc[b]], axis=1)
                z, cache = head_forward(model.head_config, model.head, x, train=True, rng=dropout_rng)
                loss, gz = loss_fn(z, tr.labels[b])
                if not math.isfinite(loss):
                    raise DivergenceError(f"non-finite training loss at epoch {epoch}", history)
                hg, gx = head_backward(model.head_config, model.head, cache, gz)
                grads = {f"head.{k}": v for k, v in hg.items()}
                if backbone_trainable:
                    bg = model.backbone.backward_pooled(pb, gx[:, :D])
                    grads.update({f"backbone.{k}": v for k, v in bg.items()})
                try:
                    adam_step(flat, grads, opt)
                except NonFiniteGradientError as exc:
                    raise DivergenceError(str(exc), history) from exc
                total += loss * len(b)
            train_loss = total / len(tr)
            val_loss = dataset_loss(model, va, loss_fn)
            if not math.isfinite(val_loss):
                raise DivergenceError(f"non-finite validation loss at epoch {epoch}", history)
            history.records.append(EpochRecord(epoch, stage, train_loss, val_loss, lr_used,
                                               time.perf_counter() - t0))
            if verbose:
                logger.info("epoch %d [%s] train %.5f val %.5f lr %.2e", epoch, stage,
                            train_loss, val_loss, lr_used)
            if val_loss < info.best_val_loss:
                info.best_val_loss = val_loss
                info.best_epoch = epoch
                best_snap = model.snapshot()
            if val_loss < ref - config.min_delta:
                ref, bad = val_loss, 0
            else:
                bad += 1
            opt.lr = sched.step(val_loss if config.scheduler == "plateau" else e + 1)
            if bad >= config.patience:
                info.early_stopped = True
                break
        info.stop_epoch = history.stopping_epoch
        model.restore(best_snap)
        best_overall = min(best_overall, info.best_val_loss)

    return TrainResult(model, history, strategy, best_overall)


def evaluate(model: FieldModel, data: FieldDataset) -> Metrics:
    if len(data) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    return Metrics.from_predictions(data.labels, model.predict(data), model.head_config.n_classes)


__all__ = ["FieldModel", "RunHistory", "EpochRecord", "StageInfo", "TrainResult", "train",
           "evaluate", "dataset_loss", "make_loss", "DivergenceError", "rng_for", "check_params"]
