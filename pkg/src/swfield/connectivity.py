"""Ballistic footpoint backmapping, image pairing and temporal splits."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path

import numpy as np

from swfield.plasma import format_time, parse_time

AU_M = 1.495978707e11
R_SUN_M = 6.957e8
SIDEREAL_PERIOD_DAYS = 25.38
SOURCE_SURFACE_AU = 2.5 * R_SUN_M / AU_M
IMAGE_CADENCE_S = 720.0


class ConnectivityError(ValueError):
    pass


class InvalidSpeedError(ConnectivityError):
    pass


class InsideSourceSurfaceError(ConnectivityError):
    pass


class UnpairedError(ConnectivityError):
    pass


@dataclass(frozen=True)
class HelioPosition:
    r: float  # AU
    lat: float  # deg
    lon: float  # deg, Carrington

    def __post_init__(self):
        if not self.r > 0:
            raise ConnectivityError("heliocentric distance must be positive")
        if not -90.0 <= self.lat <= 90.0:
            raise ConnectivityError("latitude outside [-90, 90]")
        object.__setattr__(self, "lon", float(np.mod(self.lon, 360.0)))


@dataclass(frozen=True)
class Footpoint:
    lat: float
    lon: float
    travel_time: float  # s


@dataclass(frozen=True)
class BackmapParams:
    rotation_period_days: float = SIDEREAL_PERIOD_DAYS
    source_surface_au: float = SOURCE_SURFACE_AU

    @property
    def omega_deg_s(self) -> float:
        return 360.0 / (self.rotation_period_days * 86400.0)


def backmap(r, lat, lon, v_sw, params: BackmapParams = BackmapParams()):
    """Vectorised ballistic mapping; returns ``(fp_lat, fp_lon, travel_time)``.

    The parcel is assumed to travel radially at ``v_sw`` (km/s) from the
    source surface; the footpoint longitude is the spacecraft longitude
    advanced by the solar rotation accumulated over the travel time.
    """
    r, lat, lon, v_sw = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (r, lat, lon, v_sw)))
    if np.any(~(v_sw > 0)):
        raise InvalidSpeedError("solar wind speed must be positive")
    if np.any(~(r > params.source_surface_au)):
        raise InsideSourceSurfaceError("spacecraft inside the source surface")
    travel = (r - params.source_surface_au) * AU_M / (v_sw * 1e3)
    fp_lon = np.mod(lon + params.omega_deg_s * travel, 360.0)
    return lat.copy(), fp_lon, travel


def backmap_footpoint(pos: HelioPosition, v_sw: float, params: BackmapParams = BackmapParams()) -> Footpoint:
    lat, lon, tt = backmap(pos.r, pos.lat, pos.lon, v_sw, params)
    return Footpoint(float(lat), float(lon), float(tt))


def unmap_longitude(fp_lon, travel_time, params: BackmapParams = BackmapParams()):
    """Inverse rotation: spacecraft longitude from footpoint longitude."""
    return np.mod(np.asarray(fp_lon) - params.omega_deg_s * np.asarray(travel_time), 360.0)


def forward_fill(times, values, grid_times):
    """Sample a low-cadence series onto ``grid_times`` by carrying the last value forward.

    Grid points before the first sample take the first value.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values)
    idx = np.searchsorted(times, np.asarray(grid_times, dtype=float), side="right") - 1
    return values[np.clip(idx, 0, len(times) - 1)]


# ---------------------------------------------------------------------------
# Image pairing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ImageIndexEntry:
    image_key: int  # UTC seconds
    embedding_offset: int


@dataclass
class ImageIndex:
    keys: np.ndarray  # int64, sorted, unique
    offsets: np.ndarray

    def __post_init__(self):
        self.keys = np.asarray(self.keys, dtype=np.int64)
        self.offsets = np.asarray(self.offsets, dtype=np.int64)
        if np.any(np.diff(self.keys) <= 0):
            raise ConnectivityError("image keys must be sorted and unique")

    def __len__(self) -> int:
        return len(self.keys)

    def __getitem__(self, i) -> ImageIndexEntry:
        return ImageIndexEntry(int(self.keys[i]), int(self.offsets[i]))


def pair_indices(obs_time, travel_time, keys, tolerance: float = IMAGE_CADENCE_S) -> np.ndarray:
    """Index of the image nearest each emission time, or -1 when outside ``tolerance``.

    Ties go to the earlier image.
    """
    keys = np.asarray(keys, dtype=float)
    if tolerance < 0:
        raise ValueError("tolerance must be non-negative")
    emit = np.atleast_1d(np.asarray(obs_time, dtype=float) - np.asarray(travel_time, dtype=float))
    if keys.size == 0:
        return np.full(emit.shape, -1, dtype=np.int64)
    right = np.clip(np.searchsorted(keys, emit, side="left"), 0, keys.size - 1)
    left = np.clip(right - 1, 0, keys.size - 1)
    d_left = np.abs(emit - keys[left])
    d_right = np.abs(keys[right] - emit)
    best = np.where(d_left <= d_right, left, right)
    dist = np.minimum(d_left, d_right)
    return np.where(dist <= tolerance, best, -1).astype(np.int64)


def pair_with_image(timestamp: float, travel_time: float, index: ImageIndex | list,
                    tolerance: float = IMAGE_CADENCE_S) -> ImageIndexEntry:
    if not isinstance(index, ImageIndex):
        index = ImageIndex([e.image_key for e in index], [e.embedding_offset for e in index])
    i = int(pair_indices(timestamp, travel_time, index.keys, tolerance)[0])
    if i < 0:
        raise UnpairedError(f"no image within {tolerance} s of emission time "
                            f"{format_time(timestamp - travel_time)}")
    return index[i]


def read_image_index(path: str | Path) -> ImageIndex:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["image_key_utc", "embedding_offset"]:
            raise ConnectivityError(f"unexpected image index header {reader.fieldnames}")
        rows = list(reader)
    keys = [int(round(parse_time(r["image_key_utc"]))) for r in rows]
    return ImageIndex(keys, [int(r["embedding_offset"]) for r in rows])


def write_image_index(path: str | Path, index: ImageIndex) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_key_utc", "embedding_offset"])
        for k, off in zip(index.keys, index.offsets):
            w.writerow([format_time(k), int(off)])


# ---------------------------------------------------------------------------
# Temporal splits
# ---------------------------------------------------------------------------

class Split(Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"
    EXCLUDED = "excluded"


@dataclass(frozen=True)
class SplitRule:
    months: tuple[int, ...]
    years: tuple[int, int]  # inclusive range

    def matches(self, year: int, month: int) -> bool:
        return month in self.months and self.years[0] <= year <= self.years[1]


@dataclass(frozen=True)
class SplitRules:
    train: SplitRule = SplitRule(tuple(range(4, 13)), (2019, 2023))
    validation: SplitRule = SplitRule((1, 2, 3), (2019, 2022))
    test: SplitRule = SplitRule((1, 2, 3), (2023, 2023))

    @classmethod
    def from_dict(cls, d: dict) -> "SplitRules":
        unknown = set(d) - {"train", "validation", "test"}
        if unknown:
            raise ValueError(f"unknown split keys: {sorted(unknown)}")
        base = cls()
        kw = {}
        for name in ("train", "validation", "test"):
            if name in d:
                entry = d[name]
                default = getattr(base, name)
                kw[name] = SplitRule(tuple(int(m) for m in entry.get("months", default.months)),
                                     tuple(int(y) for y in entry.get("years", default.years)))
        return cls(**kw)

    def to_dict(self) -> dict:
        return {n: {"months": list(getattr(self, n).months), "years": list(getattr(self, n).years)}
                for n in ("train", "validation", "test")}

    def assign(self, year: int, month: int) -> Split:
        for split, rule in ((Split.TRAIN, self.train), (Split.VALIDATION, self.validation),
                            (Split.TEST, self.test)):
            if rule.matches(year, month):
                return split
        return Split.EXCLUDED


def assign_split(timestamp: float, rules: SplitRules = SplitRules()) -> Split:
    dt = datetime.fromtimestamp(float(timestamp), tz=timezone.utc)
    return rules.assign(dt.year, dt.month)


def assign_splits(timestamps, rules: SplitRules = SplitRules()) -> np.ndarray:
    """Vectorised ``assign_split``; returns an object array of ``Split`` members."""
    ts = np.asarray(timestamps, dtype=float)
    months = ts.astype("datetime64[s]").astype("datetime64[M]").astype(np.int64)
    cache: dict[int, Split] = {}
    out = np.empty(ts.shape, dtype=object)
    for i, m in enumerate(months):
        m = int(m)
        if m not in cache:
            cache[m] = rules.assign(1970 + m // 12, m % 12 + 1)
        out[i] = cache[m]
    return out


@dataclass
class PairingReport:
    n_samples: int
    n_paired: int
    n_unpaired: int
    notes: list[str] = field(default_factory=list)
