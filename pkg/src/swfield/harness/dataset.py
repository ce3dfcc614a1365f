"""Labeled example containers and class balancing."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from swfield.connectivity import Split
from swfield.encoding import DEFAULT_COORDS
from swfield.plasma import WindClass, format_time, parse_time


class ImbalanceError(ValueError):
    pass


@dataclass
class FieldDataset:
    """Examples pairing an image (by index) with spacecraft/footpoint coordinates and a label.

    Per-example arrays have length n. ``images`` (n_img, H, W, C) feeds a
    mock backbone; ``embeddings`` (n_img, D) holds frozen embeddings when no
    images are available. Both are shared, not copied, by :meth:`subset`.
    """

    image_index: np.ndarray
    coords: np.ndarray  # degrees, columns in coord_names order
    labels: np.ndarray
    timestamps: np.ndarray
    split: np.ndarray  # Split members
    interp: np.ndarray
    image_keys: np.ndarray
    images: np.ndarray | None = None
    embeddings: np.ndarray | None = None
    truth: np.ndarray | None = None
    coord_names: tuple[str, ...] = DEFAULT_COORDS
    _pooled: dict = field(default_factory=dict, repr=False, compare=False)

    _PER_EXAMPLE = ("image_index", "coords", "labels", "timestamps", "split", "interp", "truth")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, mask) -> "FieldDataset":
        kw = {}
        for name in self._PER_EXAMPLE:
            val = getattr(self, name)
            kw[name] = None if val is None else val[mask]
        return replace(self, **kw, _pooled=self._pooled)

    def for_split(self, split: Split) -> "FieldDataset":
        return self.subset(self.split == split)

    def pooled(self, patch: int) -> np.ndarray:
        """Mean patch per image, cached per patch size."""
        if self.images is None:
            raise ValueError("dataset has no images")
        if patch not in self._pooled:
            n, H, W, C = self.images.shape
            x = self.images.reshape(n, H // patch, patch, W // patch, patch, C)
            self._pooled[patch] = x.mean(axis=(1, 3), dtype=np.float64).reshape(n, -1)
        return self._pooled[patch]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=len(WindClass))


def undersample(labels, seed: int, n_classes: int = 4) -> np.ndarray:
    """Indices of a class-balanced subset: every class cut to the minority count.

    Selection is without replacement and returned in ascending index order.
    """
    labels = np.asarray(labels)
    counts = np.bincount(labels, minlength=n_classes)
    if np.any(counts == 0):
        empty = [WindClass(i).slug if n_classes == 4 else i for i in np.flatnonzero(counts == 0)]
        raise ImbalanceError(f"classes without examples: {empty}")
    k = int(counts.min())
    rng = np.random.default_rng(seed)
    picked = [rng.choice(np.flatnonzero(labels == c), size=k, replace=False) for c in range(n_classes)]
    return np.sort(np.concatenate(picked))


def distribution_table(dataset: FieldDataset) -> list[dict]:
    """Per-split totals and class counts, in the style of a dataset partition table."""
    rows = []
    for split in (Split.TRAIN, Split.VALIDATION, Split.TEST):
        counts = dataset.for_split(split).class_counts()
        row = {"split": split.value, "total": int(counts.sum())}
        row.update({c.slug: int(counts[c]) for c in WindClass})
        rows.append(row)
    return rows


EXAMPLE_HEADER = ("timestamp_utc", "image_key_utc", "image_row", "sc_r_au", "sc_lat", "sc_lon",
                  "fp_lat", "fp_lon", "travel_time_s", "label", "split", "interp_flag", "truth")


def write_examples_csv(path: str | Path, dataset: FieldDataset, r_au=None, travel_time=None) -> None:
    n = len(dataset)
    r_au = np.full(n, np.nan) if r_au is None else r_au
    travel_time = np.full(n, np.nan) if travel_time is None else travel_time
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EXAMPLE_HEADER)
        for i in range(n):
            row = dataset.image_index[i]
            w.writerow([
                format_time(dataset.timestamps[i]),
                format_time(dataset.image_keys[row]),
                int(row),
                repr(float(r_au[i])),
                *(repr(float(c)) for c in dataset.coords[i]),
                repr(float(travel_time[i])),
                WindClass(int(dataset.labels[i])).slug,
                dataset.split[i].value,
                int(dataset.interp[i]),
                "" if dataset.truth is None else WindClass(int(dataset.truth[i])).slug,
            ])


def read_examples_csv(path: str | Path, image_keys) -> FieldDataset:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path} has no examples")
    has_truth = all(r.get("truth") for r in rows)
    return FieldDataset(
        image_index=np.array([int(r["image_row"]) for r in rows], dtype=np.int64),
        coords=np.array([[float(r[c]) for c in DEFAULT_COORDS] for r in rows]),
        labels=np.array([int(WindClass.from_slug(r["label"])) for r in rows], dtype=np.int64),
        timestamps=np.array([parse_time(r["timestamp_utc"]) for r in rows]),
        split=np.array([Split(r["split"]) for r in rows], dtype=object),
        interp=np.array([r["interp_flag"] == "1" for r in rows]),
        image_keys=np.asarray(image_keys, dtype=np.int64),
        truth=np.array([int(WindClass.from_slug(r["truth"])) for r in rows]) if has_truth else None,
    )


__all__ = ["FieldDataset", "undersample", "ImbalanceError", "distribution_table",
           "write_examples_csv", "read_examples_csv"]
