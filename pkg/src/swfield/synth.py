"""Seeded synthetic workloads: regime-switching plasma, toy images and a Bayes ceiling.

Ground-truth classes are drawn first; raw readings are generated from
Gaussian class-conditionals in log-feature space and inverted back to
``n_p, T_p, v_sw, B``. The labeler never sees the truth.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from swfield.connectivity import (
    IMAGE_CADENCE_S, BackmapParams, SplitRules, assign_splits, backmap, forward_fill, pair_indices,
)
from swfield.encoding import MockBackbone, pretrain_backbone
from swfield.harness.dataset import FieldDataset
from swfield.plasma import (
    LabelConfig, LabeledGrid, RawStream, WindClass, expected_temperature, parse_time, preprocess,
)

logger = logging.getLogger(__name__)


class SynthConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    # (log10 S_p, log10 v_A, log10 T_ratio) means per class, WindClass order;
    # placed inside the default labeling regions with a margin of several sigma
    class_means: tuple = ((0.9, 1.9, 0.1), (0.3, 1.6, 0.0), (-0.3, 1.4, -0.1), (0.3, 2.4, -0.3))
    class_std: float = 0.06
    class_cov: tuple | None = None  # full (4, 3, 3) override of class_std
    speed_kms: float = 400.0  # class independent so emission order is preserved
    speed_log_std: float = 0.0005
    reading_noise: float = 0.005  # log10 jitter per raw reading
    speed_reading_noise: float = 0.0002  # log10 jitter of v_sw readings
    mixture: tuple = (0.15, 0.35, 0.35, 0.15)
    dwell_minutes: tuple = (180.0, 180.0, 180.0, 120.0)
    plasma_cadence_s: float = 25.0
    field_cadence_s: float = 10.0
    gap_rate: float = 0.002
    # images
    image_shape: tuple = (32, 32, 10)
    image_noise: float = 0.5
    pattern_amplitude: float = 0.15  # class signal relative to the shared base image
    image_gain_std: float = 0.0  # per-image log-normal brightness, class independent
    image_offset_std: float = 0.0  # per-image, per-channel additive level
    pattern_seed: int = 7
    # geometry
    # quasi-co-rotating track: one seeded (r, lat, lon) per segment plus slow drifts
    r_range_au: tuple = (0.2, 0.6)
    lat_amp_deg: float = 3.4
    r_drift_au_day: float = 0.0
    lon_drift_deg_day: float = 0.0
    position_cadence_s: float = 3600.0
    segments: tuple = (
        ("2019-05-01T00:00:00Z", 6480), ("2019-09-10T00:00:00Z", 6480),
        ("2020-06-15T00:00:00Z", 6480), ("2021-08-01T00:00:00Z", 6480),
        ("2022-04-20T00:00:00Z", 6480), ("2022-11-05T00:00:00Z", 6480),
        ("2021-02-10T00:00:00Z", 6480), ("2023-02-01T00:00:00Z", 6480),
    )
    seed: int = 0

    def __post_init__(self):
        w = np.asarray(self.mixture, dtype=float)
        if w.shape != (4,) or np.any(w < 0) or not np.isclose(w.sum(), 1.0):
            raise SynthConfigError("mixture weights must be 4 non-negative numbers summing to 1")
        if np.any(np.asarray(self.dwell_minutes) < 1):
            raise SynthConfigError("dwell means must be at least one minute")
        cov = self.covariances()
        for c in range(4):
            if not np.allclose(cov[c], cov[c].T):
                raise SynthConfigError(f"covariance of class {c} is not symmetric")
            if np.linalg.eigvalsh(cov[c]).min() < -1e-12:
                raise SynthConfigError(f"covariance of class {c} is not positive semi-definite")

    def means(self) -> np.ndarray:
        return np.asarray(self.class_means, dtype=float)

    def covariances(self) -> np.ndarray:
        if self.class_cov is not None:
            return np.asarray(self.class_cov, dtype=float)
        return np.stack([np.eye(3) * self.class_std ** 2] * 4)

    def noiseless(self) -> "SynthConfig":
        from dataclasses import replace
        return replace(self, class_std=0.0, class_cov=None, speed_log_std=0.0,
                       reading_noise=0.0, speed_reading_noise=0.0, gap_rate=0.0, image_noise=0.0)


def _chol(cov: np.ndarray) -> np.ndarray:
    # eigen-decomposition tolerates singular (noiseless) covariances
    vals, vecs = np.linalg.eigh(cov)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def regime_sequence(config: SynthConfig, n_steps: int, rng: np.random.Generator,
                    step_minutes: float = 1.0) -> np.ndarray:
    """Piecewise-constant classes whose long-run occupancy matches the mixture.

    Each regime's class is drawn with probability proportional to
    ``weight / mean dwell``; dwell lengths are geometric with that mean.
    """
    w = np.asarray(config.mixture, dtype=float)
    dwell = np.maximum(np.asarray(config.dwell_minutes, dtype=float) / step_minutes, 1.0)
    p = w / dwell
    p /= p.sum()
    out = np.empty(n_steps, dtype=np.int64)
    pos = 0
    while pos < n_steps:
        c = int(rng.choice(4, p=p))
        length = int(rng.geometric(1.0 / dwell[c]))
        out[pos:pos + length] = c
        pos += length
    return out


def features_to_raw(log_feats, v_sw, config: LabelConfig):
    """Invert (log S_p, log v_A, log T_ratio) plus speed into ``n_p, T_p, B``."""
    f = np.asarray(log_feats, dtype=float)
    S, vA, Tr = 10.0 ** f[..., 0], 10.0 ** f[..., 1], 10.0 ** f[..., 2]
    T_p = Tr * expected_temperature(v_sw, config)
    n_p = (T_p / S) ** 1.5
    B = vA * 1e3 * np.sqrt(config.mu_0 * config.proton_mass * n_p * 1e6) * 1e9
    return n_p, T_p, B


@dataclass
class PlasmaStream:
    raw: RawStream
    minute_start: np.ndarray
    truth: np.ndarray
    latent: np.ndarray  # per-minute log features
    speed: np.ndarray


def latent_speed(config: SynthConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    return config.speed_kms * 10.0 ** (config.speed_log_std * rng.standard_normal(n))


def generate_plasma_stream(config: SynthConfig, duration_minutes: int, start: float = 0.0,
                           seed: int | None = None, label_config: LabelConfig | None = None,
                           truth=None, speed=None) -> PlasmaStream:
    """Raw two-instrument readings over ``duration_minutes`` starting at ``start`` (UTC s).

    ``truth`` and ``speed`` (per minute) may be supplied; otherwise a regime
    sequence and speeds are drawn from ``seed``.
    """
    if duration_minutes <= 0:
        raise SynthConfigError("duration must be positive")
    label_config = label_config or LabelConfig.builtin()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    n = int(duration_minutes)
    truth = regime_sequence(config, n, rng) if truth is None else np.asarray(truth, dtype=np.int64)
    speed = latent_speed(config, n, rng) if speed is None else np.asarray(speed, dtype=float)
    if truth.shape != (n,) or speed.shape != (n,):
        raise SynthConfigError("truth and speed need one entry per minute")
    chols = np.stack([_chol(c) for c in config.covariances()])
    z = rng.standard_normal((n, 3))
    latent = config.means()[truth] + np.einsum("nij,nj->ni", chols[truth], z)

    def readings(cadence: float):
        t_rel = np.arange(0.0, n * 60.0, cadence)
        minute = (t_rel // 60.0).astype(np.int64)
        return start + t_rel, minute

    tp, mp = readings(config.plasma_cadence_s)
    tf, mf = readings(config.field_cadence_s)
    jitter_p = rng.standard_normal((len(tp), 4)) * np.array([config.reading_noise] * 3 + [config.speed_reading_noise])
    jitter_f = config.reading_noise * rng.standard_normal((len(tf), 2))
    fp = latent[mp] + jitter_p[:, :3]
    vp = speed[mp] * 10.0 ** jitter_p[:, 3]
    n_p, T_p, _ = features_to_raw(fp, vp, label_config)
    ff = latent[mf].copy()
    ff[:, :2] += jitter_f
    _, _, B = features_to_raw(ff, speed[mf], label_config)

    keep_p = np.ones(len(tp), dtype=bool)
    keep_f = np.ones(len(tf), dtype=bool)
    if config.gap_rate > 0:
        gap_p = rng.random(n) < config.gap_rate
        gap_f = rng.random(n) < config.gap_rate
        # keep the first and last minute so the grid spans the full duration
        gap_p[[0, -1]] = False
        gap_f[[0, -1]] = False
        keep_p &= ~gap_p[mp]
        keep_f &= ~gap_f[mf]

    vals_p = np.column_stack([n_p, T_p, vp, np.full(len(tp), np.nan)])[keep_p]
    vals_f = np.column_stack([np.full((len(tf), 3), np.nan), B])[keep_f]
    t = np.concatenate([tp[keep_p], tf[keep_f]])
    inst = np.concatenate([np.full(keep_p.sum(), "plasma", dtype=object),
                           np.full(keep_f.sum(), "field", dtype=object)])
    raw = RawStream(t, inst, np.concatenate([vals_p, vals_f])).sorted()
    return PlasmaStream(raw, start + 60.0 * np.arange(n), truth, latent, speed)


# ---------------------------------------------------------------------------
# Images
# ---------------------------------------------------------------------------

def class_patterns(config: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    """Common base image and one additive pattern per class, both (H, W, C)."""
    H, W, C = config.image_shape
    rng = np.random.default_rng(config.pattern_seed)
    yy, xx = np.meshgrid(np.linspace(-1, 1, H), np.linspace(-1, 1, W), indexing="ij")
    disk = (xx ** 2 + yy ** 2 <= 0.8).astype(float)
    base = disk[..., None] * rng.uniform(0.5, 1.5, size=C)
    patterns = np.zeros((4, H, W, C))
    for c in range(4):
        gain = rng.normal(0.0, 0.4, size=C)
        patterns[c] = disk[..., None] * gain
        for _ in range(3):
            cy, cx = rng.uniform(-0.6, 0.6, size=2)
            width = rng.uniform(0.1, 0.3)
            blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width ** 2))
            patterns[c] += blob[..., None] * rng.normal(0.0, 1.0, size=C)
    return base, patterns


def image_keys_for(start: float, duration_s: float, cadence: float = IMAGE_CADENCE_S) -> np.ndarray:
    first = np.ceil(start / cadence) * cadence
    n = int(np.ceil(duration_s / cadence))
    return (first + cadence * np.arange(n)).astype(np.int64)


def render_images(classes, keys, config: SynthConfig) -> np.ndarray:
    """Images for given per-image classes; noise is seeded by (seed, key)."""
    base, patterns = class_patterns(config)
    classes = np.asarray(classes, dtype=np.int64)
    out = np.empty((len(classes),) + tuple(config.image_shape), dtype=np.float32)
    for i, (c, k) in enumerate(zip(classes, keys)):
        rng = np.random.default_rng([config.seed, int(k)])
        img = (base + config.pattern_amplitude * patterns[c]) * np.exp(config.image_gain_std * rng.standard_normal())
        img = img + config.image_offset_std * rng.standard_normal(img.shape[-1])
        if config.image_noise > 0:
            img = img + config.image_noise * rng.standard_normal(img.shape)
        out[i] = img
    return out


def generate_images(class_sequence, config: SynthConfig, start: float = 0.0,
                    class_cadence: float = 60.0) -> tuple[np.ndarray, np.ndarray]:
    """Toy images keyed every 12 minutes over the span of ``class_sequence``.

    ``class_sequence[i]`` is the class during ``[start + i*class_cadence, ...)``;
    each image shows the class in force at its key time.
    """
    seq = np.asarray(class_sequence, dtype=np.int64)
    if seq.size == 0:
        raise SynthConfigError("class sequence is empty")
    keys = image_keys_for(start, seq.size * class_cadence)
    pos = np.clip(((keys - start) // class_cadence).astype(np.int64), 0, seq.size - 1)
    return keys, render_images(seq[pos], keys, config)


# ---------------------------------------------------------------------------
# Bayes oracle
# ---------------------------------------------------------------------------

def gaussian_posterior(x, means, covs, weights) -> np.ndarray:
    """Exact class posterior for Gaussian class-conditionals, shape (n, K)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    means = np.asarray(means, dtype=float)
    covs = np.asarray(covs, dtype=float)
    weights = np.asarray(weights, dtype=float)
    K = len(weights)
    logp = np.full((x.shape[0], K), -np.inf)
    for k in range(K):
        if weights[k] <= 0:
            continue
        L = np.linalg.cholesky(covs[k])
        sol = np.linalg.solve(L, (x - means[k]).T)
        maha = (sol ** 2).sum(axis=0)
        logdet = 2.0 * np.log(np.diag(L)).sum()
        logp[:, k] = np.log(weights[k]) - 0.5 * (maha + logdet + x.shape[1] * np.log(2 * np.pi))
    logp -= logp.max(axis=1, keepdims=True)
    post = np.exp(logp)
    return post / post.sum(axis=1, keepdims=True)


def bayes_oracle(config: SynthConfig, log_features) -> tuple[np.ndarray, np.ndarray]:
    """Posterior over classes and its argmax for log-feature rows."""
    post = gaussian_posterior(log_features, config.means(), config.covariances(), config.mixture)
    return post, post.argmax(axis=1)


# ---------------------------------------------------------------------------
# End-to-end synthetic dataset
# ---------------------------------------------------------------------------

@dataclass
class Positions:
    timestamp: np.ndarray
    r: np.ndarray
    lat: np.ndarray
    lon: np.ndarray


def generate_positions(config: SynthConfig, start: float, duration_s: float,
                       rng: np.random.Generator) -> Positions:
    """Low-cadence spacecraft track (AU, deg, Carrington deg) for one segment."""
    t = start + np.arange(0.0, duration_s + config.position_cadence_s, config.position_cadence_s)
    days = (t - start) / 86400.0
    r0 = rng.uniform(*config.r_range_au)
    lat0 = rng.uniform(-config.lat_amp_deg, config.lat_amp_deg)
    lon0 = rng.uniform(0.0, 360.0)
    r = np.clip(r0 + config.r_drift_au_day * days, 0.02, None)
    lat = np.full_like(days, lat0)
    lon = np.mod(lon0 + config.lon_drift_deg_day * days, 360.0)
    return Positions(t, r, lat, lon)


@dataclass
class SynthBundle:
    config: SynthConfig
    raw: RawStream
    labeled: LabeledGrid
    truth: np.ndarray  # per grid minute
    latent: np.ndarray  # per grid minute
    positions: Positions
    dataset: FieldDataset
    r_au: np.ndarray  # per example
    travel_time: np.ndarray  # per example
    backbone: MockBackbone
    n_unpaired: int = 0
    notes: list[str] = field(default_factory=list)
    image_classes: np.ndarray | None = None


def build_synthetic_dataset(config: SynthConfig = SynthConfig(),
                            label_config: LabelConfig | None = None,
                            backmap_params: BackmapParams = BackmapParams(),
                            split_rules: SplitRules = SplitRules(),
                            embedding_dim: int = 128, patch: int = 8) -> SynthBundle:
    """Generate a campaign and run the full preprocessing chain on it.

    Wind classes are fixed at the source: a regime sequence is drawn over the
    12-minute image keys and each observed minute inherits the class of the
    image nearest its emission time. The raw streams are then labeled by the
    rule-based labeler, positions are forward-filled to one minute, footpoints
    are backmapped ballistically and minutes are paired with images exactly as
    for real inputs.
    """
    label_config = label_config or LabelConfig.builtin()
    seg_seeds = np.random.SeedSequence(config.seed).spawn(len(config.segments))
    streams, tracks, seg_keys, seg_classes = [], [], [], []
    for i, (start_txt, minutes) in enumerate(config.segments):
        start = parse_time(start_txt)
        plasma_seq, track_seq, regime_seq = seg_seeds[i].spawn(3)
        plasma_rng = np.random.default_rng(plasma_seq)
        track = generate_positions(config, start, minutes * 60.0, np.random.default_rng(track_seq))
        t = start + 60.0 * np.arange(minutes)
        speed = latent_speed(config, minutes, plasma_rng)
        r = forward_fill(track.timestamp, track.r, t)
        _, _, tt = backmap(r, np.zeros(minutes), np.zeros(minutes), speed, backmap_params)
        near = np.round((t - tt) / IMAGE_CADENCE_S).astype(np.int64)
        block0 = near.min() - 1
        blocks = regime_sequence(config, int(near.max() - block0 + 2), np.random.default_rng(regime_seq),
                                 step_minutes=IMAGE_CADENCE_S / 60.0)
        truth = blocks[near - block0]
        streams.append(generate_plasma_stream(config, minutes, start, int(plasma_rng.integers(2**63)),
                                              label_config, truth=truth, speed=speed))
        tracks.append(track)
        seg_keys.append((block0 + np.arange(len(blocks))) * int(IMAGE_CADENCE_S))
        seg_classes.append(blocks)

    raw = RawStream(np.concatenate([s.raw.timestamp for s in streams]),
                    np.concatenate([s.raw.instrument for s in streams]),
                    np.concatenate([s.raw.values for s in streams])).sorted()
    labeled = preprocess(raw, label_config)
    grid = labeled.grid
    minute_t = np.concatenate([s.minute_start for s in streams])
    order = np.argsort(minute_t)
    minute_t = minute_t[order]
    pos_idx = np.searchsorted(minute_t, grid.timestamp)
    if not np.array_equal(minute_t[np.clip(pos_idx, 0, len(minute_t) - 1)], grid.timestamp):
        raise RuntimeError("resampled grid does not align with generated minutes")
    truth = np.concatenate([s.truth for s in streams])[order][pos_idx]
    latent = np.concatenate([s.latent for s in streams])[order][pos_idx]

    positions = Positions(*(np.concatenate([getattr(p, k) for p in tracks])
                            for k in ("timestamp", "r", "lat", "lon")))
    porder = np.argsort(positions.timestamp, kind="stable")
    positions = Positions(*(getattr(positions, k)[porder] for k in ("timestamp", "r", "lat", "lon")))
    r = forward_fill(positions.timestamp, positions.r, grid.timestamp)
    lat = forward_fill(positions.timestamp, positions.lat, grid.timestamp)
    lon = forward_fill(positions.timestamp, positions.lon, grid.timestamp)
    fp_lat, fp_lon, tt = backmap(r, lat, lon, grid.v_sw, backmap_params)

    keys, first = np.unique(np.concatenate(seg_keys), return_index=True)
    img_class = np.concatenate(seg_classes)[first]
    images = render_images(img_class, keys, config)
    backbone = pretrain_backbone(images, embedding_dim, patch)
    img_idx = pair_indices(grid.timestamp, tt, keys, IMAGE_CADENCE_S)
    paired = img_idx >= 0

    splits = assign_splits(grid.timestamp, split_rules)
    keep = paired & labeled.valid & np.array([s.value != "excluded" for s in splits])
    dataset = FieldDataset(
        image_index=img_idx[keep],
        coords=np.column_stack([lat, lon, fp_lat, fp_lon])[keep],
        labels=labeled.label[keep],
        timestamps=grid.timestamp[keep],
        split=splits[keep],
        interp=grid.interp_any[keep],
        image_keys=keys,
        images=images,
        truth=truth[keep],
    )
    notes = [f"positions sampled every {config.position_cadence_s:.0f} s and forward-filled to 1 minute"]
    return SynthBundle(config, raw, labeled, truth, latent, positions, dataset, r[keep], tt[keep],
                       backbone, int((~paired).sum()), notes, img_class)


def small_config(**overrides) -> SynthConfig:
    """A quick two-split workload for tests and demos (~8.6k minutes)."""
    from dataclasses import replace
    base = SynthConfig(segments=(
        ("2019-05-01T00:00:00Z", 2880), ("2020-07-01T00:00:00Z", 2880),
        ("2021-02-10T00:00:00Z", 1440), ("2023-02-01T00:00:00Z", 1440),
    ))
    return replace(base, **overrides)


__all__ = [
    "SynthConfig", "SynthConfigError", "generate_plasma_stream", "generate_images", "render_images",
    "bayes_oracle", "gaussian_posterior", "build_synthetic_dataset", "SynthBundle", "regime_sequence",
    "class_patterns", "features_to_raw", "generate_positions", "small_config", "WindClass",
]
