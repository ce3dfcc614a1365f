"""In-situ plasma preprocessing and four-class solar wind labeling.

Raw instrument readings are binned onto a one-minute grid, gaps are filled
by linear interpolation (flagged per instrument), and each minute is labeled
from three derived quantities: proton specific entropy, Alfven speed and the
ratio of proton temperature to the speed-dependent expected temperature.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import IntEnum
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array

logger = logging.getLogger(__name__)

# CODATA 2018
MU_0 = 1.25663706212e-6  # N A^-2
PROTON_MASS = 1.67262192369e-27  # kg
EV_PER_KELVIN = 8.617333262e-5

CHANNELS = ("n_p", "T_p", "v_sw", "B")
INSTRUMENTS = ("field", "plasma")
CHANNEL_INSTRUMENT = {"n_p": "plasma", "T_p": "plasma", "v_sw": "plasma", "B": "field"}
FEATURE_NAMES = ("log_S_p", "log_v_A", "log_T_ratio")


class PlasmaError(ValueError):
    """Base class for preprocessing and labeling failures."""


class EmptySeriesError(PlasmaError):
    pass


class NonFiniteReadingError(PlasmaError):
    def __init__(self, index: int, what: str = "reading"):
        super().__init__(f"non-finite {what} at index {index}")
        self.index = index


class UnrecoverableChannelError(PlasmaError):
    pass


class DegenerateInputError(PlasmaError):
    pass


class UnclassifiableError(PlasmaError):
    pass


class WindClass(IntEnum):
    CORONAL_HOLE = 0
    STREAMER_BELT = 1
    SECTOR_REVERSAL = 2
    EJECTA = 3

    @property
    def slug(self) -> str:
        return self.name.lower()

    @classmethod
    def from_slug(cls, name: str) -> "WindClass":
        key = name.strip().upper().replace("-", "_").replace(" ", "_")
        try:
            return cls[key]
        except KeyError:
            raise ValueError(f"unknown wind class {name!r}") from None


# ---------------------------------------------------------------------------
# Resampling and gap filling
# ---------------------------------------------------------------------------

@dataclass
class BinnedSeries:
    """Uniform-cadence bins; ``values`` is NaN where a bin had no readings."""

    bin_start: np.ndarray  # (n_bins,)
    values: np.ndarray  # (n_bins, n_channels)
    counts: np.ndarray  # (n_bins, n_channels)
    cadence: float
    channels: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.bin_start)


def resample_series(
    timestamps,
    values,
    cadence: float = 60.0,
    channels: Sequence[str] | None = None,
    span: tuple[float, float] | None = None,
) -> BinnedSeries:
    """Bin-average one instrument stream onto a left-closed cadence grid.

    NaN entries in ``values`` are treated as missing for that channel only.
    Infinite values or non-finite timestamps raise ``NonFiniteReadingError``.
    ``span`` forces the grid to cover ``[span[0], span[1]]`` so several
    instruments can share one grid.
    """
    t = np.asarray(timestamps, dtype=float)
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    if cadence <= 0:
        raise ValueError("cadence must be positive")
    if t.size == 0:
        raise EmptySeriesError("cannot resample an empty stream")
    if v.shape[0] != t.shape[0]:
        raise ValueError("timestamps and values differ in length")
    bad_t = np.flatnonzero(~np.isfinite(t))
    if bad_t.size:
        raise NonFiniteReadingError(int(bad_t[0]), "timestamp")
    bad_v = np.flatnonzero(np.isinf(v).any(axis=1))
    if bad_v.size:
        raise NonFiniteReadingError(int(bad_v[0]))
    if np.any(np.diff(t) < 0):
        raise PlasmaError("stream must be sorted by timestamp")
    if channels is None:
        channels = tuple(f"c{i}" for i in range(v.shape[1]))

    lo, hi = (t[0], t[-1]) if span is None else (min(span[0], t[0]), max(span[1], t[-1]))
    first = np.floor(lo / cadence) * cadence
    n_bins = int(np.floor(hi / cadence) - np.floor(lo / cadence)) + 1
    idx = np.floor(t / cadence).astype(np.int64) - int(np.floor(lo / cadence))

    present = ~np.isnan(v)
    sums = np.zeros((n_bins, v.shape[1]))
    counts = np.zeros((n_bins, v.shape[1]), dtype=np.int64)
    for j in range(v.shape[1]):
        ok = present[:, j]
        sums[:, j] = np.bincount(idx[ok], weights=v[ok, j], minlength=n_bins)
        counts[:, j] = np.bincount(idx[ok], minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    starts = first + cadence * np.arange(n_bins)
    return BinnedSeries(starts, means, counts, float(cadence), tuple(channels))


@dataclass
class PlasmaGrid:
    """Gapless one-minute plasma samples with per-instrument interpolation flags."""

    timestamp: np.ndarray
    n_p: np.ndarray
    T_p: np.ndarray
    v_sw: np.ndarray
    B: np.ndarray
    flag_field: np.ndarray
    flag_plasma: np.ndarray

    def __len__(self) -> int:
        return len(self.timestamp)

    def channel(self, name: str) -> np.ndarray:
        return getattr(self, name)

    @property
    def interp_any(self) -> np.ndarray:
        return self.flag_field | self.flag_plasma


def fill_series(values) -> tuple[np.ndarray, np.ndarray]:
    """Linearly interpolate NaNs in a uniform 1-D series; edges take the nearest value."""
    x = np.asarray(values, dtype=float)
    missing = np.isnan(x)
    if missing.all():
        raise UnrecoverableChannelError("channel has no valid bins")
    if not missing.any():
        return x.copy(), missing
    pos = np.arange(x.size)
    # np.interp clamps to the end values outside the valid range
    filled = np.interp(pos, pos[~missing], x[~missing])
    return filled, missing


def fill_gaps(series: BinnedSeries, channel_instrument: dict[str, str] | None = None) -> PlasmaGrid:
    """Fill missing bins of a merged series and flag them per owning instrument."""
    owner = channel_instrument or CHANNEL_INSTRUMENT
    n = len(series)
    flags = {inst: np.zeros(n, dtype=bool) for inst in INSTRUMENTS}
    out = {}
    for j, name in enumerate(series.channels):
        try:
            filled, missing = fill_series(series.values[:, j])
        except UnrecoverableChannelError:
            raise UnrecoverableChannelError(f"channel {name!r} is entirely missing") from None
        out[name] = filled
        flags[owner[name]] |= missing
    return PlasmaGrid(
        timestamp=series.bin_start.copy(),
        n_p=out["n_p"],
        T_p=out["T_p"],
        v_sw=out["v_sw"],
        B=out["B"],
        flag_field=flags["field"],
        flag_plasma=flags["plasma"],
    )


@dataclass
class RawStream:
    """Column-oriented raw readings from both instruments."""

    timestamp: np.ndarray
    instrument: np.ndarray  # array of "field" / "plasma"
    values: np.ndarray  # (n, 4) in CHANNELS order, NaN = missing

    def __len__(self) -> int:
        return len(self.timestamp)

    def sorted(self) -> "RawStream":
        order = np.argsort(self.timestamp, kind="stable")
        return RawStream(self.timestamp[order], self.instrument[order], self.values[order])


def resample_raw(raw: RawStream, cadence: float = 60.0) -> BinnedSeries:
    """Resample both instruments onto one shared grid and merge their channels."""
    if len(raw) == 0:
        raise EmptySeriesError("cannot resample an empty stream")
    raw = raw.sorted()
    span = (float(raw.timestamp[0]), float(raw.timestamp[-1]))
    merged = None
    for inst in INSTRUMENTS:
        mask = raw.instrument == inst
        cols = [i for i, c in enumerate(CHANNELS) if CHANNEL_INSTRUMENT[c] == inst]
        if mask.any():
            part = resample_series(raw.timestamp[mask], raw.values[np.ix_(mask, cols)],
                                   cadence, [CHANNELS[i] for i in cols], span=span)
        else:
            part = None
        if merged is None:
            n_bins = int(np.floor(span[1] / cadence) - np.floor(span[0] / cadence)) + 1
            merged = BinnedSeries(
                np.floor(span[0] / cadence) * cadence + cadence * np.arange(n_bins),
                np.full((n_bins, len(CHANNELS)), np.nan),
                np.zeros((n_bins, len(CHANNELS)), dtype=np.int64),
                float(cadence),
                CHANNELS,
            )
        if part is not None:
            merged.values[:, cols] = part.values
            merged.counts[:, cols] = part.counts
    return merged


# ---------------------------------------------------------------------------
# Derived quantities and labeling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LabelRule:
    wind_class: WindClass
    coef: tuple[float, float, float]  # on (log S_p, log v_A, log T_ratio)
    intercept: float

    def score(self, feats: np.ndarray) -> np.ndarray:
        return feats @ np.asarray(self.coef, dtype=float) + self.intercept


@dataclass(frozen=True)
class LabelConfig:
    """Decision sequence of planar boundaries in log10 feature space.

    Rules are tried in order; the first whose score ``coef . f + intercept``
    is >= 0 (or > 0 when ``inclusive`` is False) assigns its class. Samples
    matching no rule fall through to ``fallback``.
    """

    rules: tuple[LabelRule, ...]
    fallback: WindClass
    inclusive: bool = True
    texp_base_speed: float = 258.0  # km/s
    texp_exponent: float = 3.113
    mu_0: float = MU_0
    proton_mass: float = PROTON_MASS
    ev_per_kelvin: float = EV_PER_KELVIN
    version: str = "1"
    name: str = "custom"
    physical: bool = True

    def __post_init__(self):
        for rule in self.rules:
            if not np.any(np.asarray(rule.coef) != 0):
                raise ValueError(f"rule for {rule.wind_class.slug} has a zero coefficient vector")
        covered = {r.wind_class for r in self.rules} | {self.fallback}
        if covered != set(WindClass):
            missing = sorted(c.slug for c in set(WindClass) - covered)
            raise ValueError(f"decision sequence does not cover classes: {missing}")

    @property
    def sequence(self) -> tuple[WindClass, ...]:
        return tuple(r.wind_class for r in self.rules) + (self.fallback,)

    @classmethod
    def from_dict(cls, d: dict) -> "LabelConfig":
        known = {"name", "version", "physical", "inclusive", "fallback", "rules", "t_exp", "constants"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown label config keys: {sorted(unknown)}")
        rules = tuple(
            LabelRule(WindClass.from_slug(r["class"]), tuple(float(c) for c in r["coef"]),
                      float(r["intercept"]))
            for r in d["rules"]
        )
        texp = d.get("t_exp", {})
        consts = d.get("constants", {})
        return cls(
            rules=rules,
            fallback=WindClass.from_slug(d["fallback"]),
            inclusive=bool(d.get("inclusive", True)),
            texp_base_speed=float(texp.get("base_speed_kms", 258.0)),
            texp_exponent=float(texp.get("exponent", 3.113)),
            mu_0=float(consts.get("mu_0", MU_0)),
            proton_mass=float(consts.get("proton_mass", PROTON_MASS)),
            ev_per_kelvin=float(consts.get("ev_per_kelvin", EV_PER_KELVIN)),
            version=str(d.get("version", "1")),
            name=str(d.get("name", "custom")),
            physical=bool(d.get("physical", True)),
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "version": self.version,
            "physical": self.physical,
            "inclusive": self.inclusive,
            "fallback": self.fallback.slug,
            "rules": [
                {"class": r.wind_class.slug, "coef": list(r.coef), "intercept": r.intercept}
                for r in self.rules
            ],
            "t_exp": {"base_speed_kms": self.texp_base_speed, "exponent": self.texp_exponent},
            "constants": {"mu_0": self.mu_0, "proton_mass": self.proton_mass,
                          "ev_per_kelvin": self.ev_per_kelvin},
        }

    @classmethod
    def load(cls, path: str | Path) -> "LabelConfig":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))

    @classmethod
    def builtin(cls, name: str = "xu2015") -> "LabelConfig":
        """Packaged configs: ``xu2015`` (default) or ``fixture`` (non-physical, tests only)."""
        text = resources.files("swfield.data").joinpath(f"labeling_{name}.yaml").read_text()
        return cls.from_dict(yaml.safe_load(text))


def expected_temperature(v_sw, config: LabelConfig):
    return (np.asarray(v_sw, dtype=float) / config.texp_base_speed) ** config.texp_exponent


@dataclass
class DerivedPlasma:
    S_p: np.ndarray  # eV cm^2
    v_A: np.ndarray  # km/s
    T_ratio: np.ndarray

    def log_features(self) -> np.ndarray:
        """Stack of log10 features, shape (..., 3)."""
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.stack(
                [np.log10(self.S_p), np.log10(self.v_A), np.log10(self.T_ratio)], axis=-1
            )


def derive_quantities(n_p, T_p, v_sw, B, config: LabelConfig) -> DerivedPlasma:
    """Specific entropy, Alfven speed and temperature ratio.

    Units: n_p in cm^-3, T_p in eV, v_sw in km/s, B in nT.
    """
    n_p, T_p, v_sw, B = (np.asarray(a, dtype=float) for a in (n_p, T_p, v_sw, B))
    if np.any(~(n_p > 0)) or np.any(~(T_p > 0)):
        raise DegenerateInputError("density and temperature must be positive")
    if np.any(~(v_sw > 0)):
        raise DegenerateInputError("bulk speed must be positive")
    if np.any(B < 0):
        raise DegenerateInputError("field magnitude must be non-negative")
    S_p = T_p / n_p ** (2.0 / 3.0)
    rho = config.mu_0 * config.proton_mass * n_p * 1e6
    v_A = (B * 1e-9) / np.sqrt(rho) * 1e-3
    T_ratio = T_p / expected_temperature(v_sw, config)
    return DerivedPlasma(S_p, v_A, T_ratio)


def classify_features(feats, config: LabelConfig) -> np.ndarray:
    """Vectorised labeler over an (n, 3) array of log10 features."""
    f = np.atleast_2d(np.asarray(feats, dtype=float))
    bad = np.flatnonzero(~np.isfinite(f).all(axis=1))
    if bad.size:
        raise UnclassifiableError(f"non-finite log feature at index {int(bad[0])}")
    labels = np.full(f.shape[0], int(config.fallback), dtype=np.int64)
    undecided = np.ones(f.shape[0], dtype=bool)
    for rule in config.rules:
        s = rule.score(f)
        fires = (s >= 0) if config.inclusive else (s > 0)
        hit = undecided & fires
        labels[hit] = int(rule.wind_class)
        undecided &= ~hit
    return labels


def classify_wind(derived: DerivedPlasma, config: LabelConfig):
    """Label derived plasma; returns a ``WindClass`` for scalars, else an int array."""
    feats = derived.log_features()
    labels = classify_features(feats.reshape(-1, 3), config)
    if feats.ndim == 1:
        return WindClass(int(labels[0]))
    return labels


@dataclass
class LabeledGrid:
    grid: PlasmaGrid
    derived: DerivedPlasma  # NaN where excluded
    label: np.ndarray  # -1 where excluded
    valid: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.valid is None:
            self.valid = self.label >= 0


def label_grid(grid: PlasmaGrid, config: LabelConfig) -> LabeledGrid:
    """Derive and label every minute; degenerate minutes get label -1 and are logged."""
    n = len(grid)
    ok = (grid.n_p > 0) & (grid.T_p > 0) & (grid.v_sw > 0) & (grid.B > 0)
    S = np.full(n, np.nan)
    vA = np.full(n, np.nan)
    Tr = np.full(n, np.nan)
    label = np.full(n, -1, dtype=np.int64)
    if ok.any():
        d = derive_quantities(grid.n_p[ok], grid.T_p[ok], grid.v_sw[ok], grid.B[ok], config)
        S[ok], vA[ok], Tr[ok] = d.S_p, d.v_A, d.T_ratio
        label[ok] = classify_features(d.log_features(), config)
    n_bad = int((~ok).sum())
    if n_bad:
        logger.warning("excluded %d degenerate minute(s) from labeling", n_bad)
    return LabeledGrid(grid, DerivedPlasma(S, vA, Tr), label)


# ---------------------------------------------------------------------------
# Estimator wrappers
# ---------------------------------------------------------------------------

class PlasmaDeriver(TransformerMixin, BaseEstimator):
    """Map raw ``[n_p, T_p, v_sw, B]`` rows to log10 labeling features."""

    def __init__(self, config: LabelConfig | None = None):
        self.config = config

    def fit(self, X, y=None):
        check_array(X)
        self.config_ = self.config or LabelConfig.builtin()
        self.n_features_in_ = 4
        return self

    def transform(self, X):
        X = check_array(X)
        if X.shape[1] != 4:
            raise ValueError("expected columns n_p, T_p, v_sw, B")
        config = getattr(self, "config_", None) or self.config or LabelConfig.builtin()
        d = derive_quantities(X[:, 0], X[:, 1], X[:, 2], X[:, 3], config)
        return d.log_features()


class WindLabeler(ClassifierMixin, BaseEstimator):
    """Rule-based classifier on log10 features; ``fit`` only validates input."""

    def __init__(self, config: LabelConfig | None = None):
        self.config = config

    def fit(self, X, y=None):
        check_array(X)
        self.config_ = self.config or LabelConfig.builtin()
        self.classes_ = np.array([int(c) for c in WindClass])
        self.n_features_in_ = 3
        return self

    def predict(self, X):
        X = check_array(X, ensure_all_finite=False)
        config = getattr(self, "config_", None) or self.config or LabelConfig.builtin()
        return classify_features(X, config)


# ---------------------------------------------------------------------------
# CSV interfaces
# ---------------------------------------------------------------------------

RAW_HEADER = ("timestamp_utc", "instrument", "n_p_cm3", "T_p_eV", "v_sw_kms", "B_nT")
LABELED_HEADER = ("timestamp_utc", "n_p_cm3", "T_p_eV", "v_sw_kms", "B_nT",
                  "S_p", "v_A_kms", "T_ratio", "label",
                  "interp_flag_fields", "interp_flag_plasma")


def parse_time(text: str) -> float:
    """UTC seconds from either a float or an ISO-8601 string."""
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        pass
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def format_time(t: float) -> str:
    dt = datetime.fromtimestamp(float(t), tz=timezone.utc)
    if dt.microsecond:
        return dt.strftime("%Y-%m-%dT%H:%M:%S.%fZ")
    return dt.strftime("%Y-%m-%dT%H:%M:%SZ")


def _cell(text: str, row: int, col: str) -> float:
    if text.strip() == "":
        return np.nan
    val = float(text)
    if not np.isfinite(val):
        raise NonFiniteReadingError(row, f"value in column {col}")
    return val


def read_raw_csv(path: str | Path) -> RawStream:
    """Read raw readings; a ``T_p_K`` column is converted to eV."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        kelvin = "T_p_K" in header
        expected = list(RAW_HEADER)
        if kelvin:
            expected[3] = "T_p_K"
        if header != expected:
            raise PlasmaError(f"unexpected raw CSV header {header}")
        ts, inst, vals = [], [], []
        for i, row in enumerate(reader):
            if not row:
                continue
            t = parse_time(row[0])
            if not np.isfinite(t):
                raise NonFiniteReadingError(i, "timestamp")
            tag = row[1].strip()
            if tag not in INSTRUMENTS:
                raise PlasmaError(f"row {i}: unknown instrument {tag!r}")
            ts.append(t)
            inst.append(tag)
            vals.append([_cell(row[2 + k], i, header[2 + k]) for k in range(4)])
    values = np.array(vals, dtype=float).reshape(-1, 4)
    if kelvin:
        values[:, 1] *= EV_PER_KELVIN
    return RawStream(np.array(ts, dtype=float), np.array(inst, dtype=object), values)


def write_raw_csv(path: str | Path, raw: RawStream) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RAW_HEADER)
        for t, inst, v in zip(raw.timestamp, raw.instrument, raw.values):
            w.writerow([format_time(t), inst] + ["" if np.isnan(x) else repr(float(x)) for x in v])


def _fmt(x: float) -> str:
    return "" if not np.isfinite(x) else repr(float(x))


def write_grid_csv(path: str | Path, grid: PlasmaGrid) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABELED_HEADER[:5] + LABELED_HEADER[-2:])
        for i in range(len(grid)):
            w.writerow([format_time(grid.timestamp[i])]
                       + [_fmt(grid.channel(c)[i]) for c in CHANNELS]
                       + [int(grid.flag_field[i]), int(grid.flag_plasma[i])])


def write_labeled_csv(path: str | Path, labeled: LabeledGrid) -> None:
    g, d = labeled.grid, labeled.derived
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABELED_HEADER)
        for i in range(len(g)):
            lab = labeled.label[i]
            w.writerow([format_time(g.timestamp[i])]
                       + [_fmt(g.channel(c)[i]) for c in CHANNELS]
                       + [_fmt(d.S_p[i]), _fmt(d.v_A[i]), _fmt(d.T_ratio[i]),
                          WindClass(int(lab)).slug if lab >= 0 else "",
                          int(g.flag_field[i]), int(g.flag_plasma[i])])


def read_grid_csv(path: str | Path) -> tuple[PlasmaGrid, np.ndarray | None]:
    """Read a resampled or labeled grid; returns the grid and labels (if present)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        fields = reader.fieldnames or []
    if not rows:
        raise EmptySeriesError(f"{path} has no rows")
    col = lambda name: np.array([_cell(r[name], i, name) for i, r in enumerate(rows)])
    grid = PlasmaGrid(
        timestamp=np.array([parse_time(r["timestamp_utc"]) for r in rows]),
        n_p=col("n_p_cm3"), T_p=col("T_p_eV"), v_sw=col("v_sw_kms"), B=col("B_nT"),
        flag_field=np.array([r["interp_flag_fields"] == "1" for r in rows]),
        flag_plasma=np.array([r["interp_flag_plasma"] == "1" for r in rows]),
    )
    labels = None
    if "label" in fields:
        labels = np.array([int(WindClass.from_slug(r["label"])) if r["label"] else -1 for r in rows])
    return grid, labels


def split_segments(raw: RawStream, max_gap: float = 3600.0) -> list[RawStream]:
    """Cut a sorted stream wherever consecutive readings are more than ``max_gap`` apart."""
    raw = raw.sorted()
    cuts = np.flatnonzero(np.diff(raw.timestamp) > max_gap) + 1
    bounds = np.concatenate([[0], cuts, [len(raw)]])
    return [RawStream(raw.timestamp[a:b], raw.instrument[a:b], raw.values[a:b])
            for a, b in zip(bounds[:-1], bounds[1:])]


def concat_grids(grids: Sequence[PlasmaGrid]) -> PlasmaGrid:
    names = ("timestamp", "n_p", "T_p", "v_sw", "B", "flag_field", "flag_plasma")
    return PlasmaGrid(**{k: np.concatenate([getattr(g, k) for g in grids]) for k in names})


def preprocess(raw: RawStream, config: LabelConfig, cadence: float = 60.0,
               max_gap: float = 3600.0) -> LabeledGrid:
    """Resample, gap-fill and label a raw stream.

    Segments separated by more than ``max_gap`` seconds are processed
    independently so that gap filling never bridges separate campaigns.
    """
    if len(raw) == 0:
        raise EmptySeriesError("cannot preprocess an empty stream")
    grids = [fill_gaps(resample_raw(seg, cadence)) for seg in split_segments(raw, max_gap)]
    return label_grid(concat_grids(grids), config)


def class_counts(labels: Iterable[int]) -> dict[str, int]:
    labels = np.asarray(list(labels))
    return {c.slug: int((labels == c).sum()) for c in WindClass}


__all__ = [
    "WindClass", "LabelConfig", "LabelRule", "DerivedPlasma", "PlasmaGrid", "RawStream",
    "BinnedSeries", "LabeledGrid", "resample_series", "resample_raw", "fill_gaps",
    "fill_series", "derive_quantities", "classify_wind", "classify_features", "label_grid",
    "preprocess", "PlasmaDeriver", "WindLabeler", "expected_temperature",
]
