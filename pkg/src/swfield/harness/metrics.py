"""Confusion-matrix metrics with macro averaging."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from swfield.plasma import WindClass


def confusion_matrix(truth, pred, n_classes: int = 4) -> np.ndarray:
    """Counts with rows = truth and columns = prediction."""
    truth = np.asarray(truth, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if truth.shape != pred.shape:
        raise ValueError("truth and prediction lengths differ")
    flat = np.bincount(truth * n_classes + pred, minlength=n_classes * n_classes)
    return flat.reshape(n_classes, n_classes)


def _safe_div(num, den):
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


@dataclass
class Metrics:
    confusion: np.ndarray
    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray

    @property
    def macro_precision(self) -> float:
        return float(self.precision.mean())

    @property
    def macro_recall(self) -> float:
        return float(self.recall.mean())

    @property
    def macro_f1(self) -> float:
        return float(self.f1.mean())

    @property
    def n_samples(self) -> int:
        return int(self.confusion.sum())

    @classmethod
    def from_confusion(cls, cm) -> "Metrics":
        cm = np.asarray(cm, dtype=np.int64)
        tp = np.diag(cm).astype(float)
        precision = _safe_div(tp, cm.sum(axis=0))
        recall = _safe_div(tp, cm.sum(axis=1))
        f1 = _safe_div(2 * precision * recall, precision + recall)
        total = cm.sum()
        accuracy = float(tp.sum() / total) if total else 0.0
        return cls(cm, accuracy, precision, recall, f1)

    @classmethod
    def from_predictions(cls, truth, pred, n_classes: int = 4) -> "Metrics":
        return cls.from_confusion(confusion_matrix(truth, pred, n_classes))

    def to_dict(self) -> dict:
        names = [c.slug for c in WindClass] if len(self.precision) == len(WindClass) else \
            [str(i) for i in range(len(self.precision))]
        return {
            "n_samples": self.n_samples,
            "confusion_matrix": self.confusion.tolist(),
            "classes": names,
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "per_class": {
                n: {"precision": float(p), "recall": float(r), "f1": float(f)}
                for n, p, r, f in zip(names, self.precision, self.recall, self.f1)
            },
        }
