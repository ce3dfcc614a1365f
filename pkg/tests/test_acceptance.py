"""Acceptance gate: one or more tests per criterion, tagged with ``criterion(n)``.

The terminal summary prints one PASS/FAIL line per criterion.
"""
import calendar
import math
import time
from datetime import datetime, timezone

import numpy as np
import pytest

from swfield.connectivity import BackmapParams, Split, assign_split, backmap, unmap_longitude
from swfield.encoding import MockBackbone, build_feature, FourierConfig, fourier_encode, fourier_encode_grad
from swfield.harness import HeadClassifier
from swfield.harness.config import TrainConfig
from swfield.harness.experiments import build_model, compare_strategies, split_metrics
from swfield.harness.metrics import Metrics
from swfield.harness.training import evaluate, train
from swfield.neural import (
    AdamState, HeadConfig, adam_step, cross_entropy, dropout_masks, focal_loss, head_backward, head_forward,
    init_head,
)
from swfield.plasma import LabelConfig, classify_features, fill_gaps, preprocess, resample_series
from swfield.synth import SynthConfig, bayes_oracle, build_synthetic_dataset, generate_plasma_stream, small_config

from test_harness import brute_force_metrics
from test_plasma import brute_force_bins, plane_oracle

WIDTHS = (64, 128, 256, 512, 1024)


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)


@pytest.fixture(scope="module")
def default_bundle():
    t0 = time.perf_counter()
    b = build_synthetic_dataset(SynthConfig())
    b.build_seconds = time.perf_counter() - t0
    return b


# -- 1 ------------------------------------------------------------------------

@pytest.mark.criterion(1)
def test_c1_fourier_encoding():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    h = 1e-7
    for _ in range(1000):
        x, L = rng.uniform(-1, 1), int(rng.integers(1, 13))
        enc = fourier_encode(x, L)
        assert enc.shape == (2 * L,)
        assert abs(float(enc @ enc) - L) < 1e-12
        an = fourier_encode_grad(x, L)
        fd = (fourier_encode(x + h, L) - fourier_encode(x - h, L)) / (2 * h)
        assert rel_err(an, fd) < 1e-6
    assert time.perf_counter() - t0 < 1.0


# -- 2 ------------------------------------------------------------------------

@pytest.mark.criterion(2)
def test_c2_focal_gamma0_equals_ce():
    rng = np.random.default_rng(2)
    for _ in range(10_000):
        n = int(rng.integers(1, 33))
        z = rng.normal(0, 3, size=(n, 4))
        y = rng.integers(0, 4, n)
        fl, _ = focal_loss(z, y, np.ones(4), 0.0)
        ce, _ = cross_entropy(z, y)
        assert abs(fl - ce) < 1e-9


@pytest.mark.criterion(2)
def test_c2_focal_hand_value():
    z = np.array([[math.log(3.0), 0.0, 0.0, 0.0]])  # p_t = 0.5
    loss, _ = focal_loss(z, np.array([0]), np.array([0.45, 0.3, 0.15, 0.1]), 2.0)
    assert abs(loss - 0.45 * 0.25 * math.log(2.0)) < 1e-6
    assert abs(loss - 0.07799) < 2e-5


# -- 3 ------------------------------------------------------------------------

def _fd_entries(f, arr, idx, h=1e-5):
    """Central differences plus a flag for stencils that keep every ReLU on the same side.

    ``f`` returns (loss, activation pattern). A stencil whose pattern differs
    from the unperturbed one straddles a kink, so its quotient is not a
    derivative estimate at this step.
    """
    _, base = f()
    out = np.empty(len(idx))
    smooth = np.ones(len(idx), dtype=bool)
    for n, i in enumerate(idx):
        old = arr[i]
        arr[i] = old + h
        fp, pp = f()
        arr[i] = old - h
        fm, pm = f()
        arr[i] = old
        out[n] = (fp - fm) / (2 * h)
        smooth[n] = all(np.array_equal(a, b) and np.array_equal(a, c) for a, b, c in zip(base, pp, pm))
    return out, smooth


def _sample(arr, k, rng):
    flat = rng.choice(arr.size, size=min(k, arr.size), replace=False)
    return [np.unravel_index(i, arr.shape) for i in flat]


def _chain_config(rng):
    kind = ["linear", "skip"][int(rng.integers(2))]
    hidden = int(rng.choice(WIDTHS))
    head = HeadConfig(kind, hidden=hidden, n_layers=int(rng.integers(2, 6)), skip_every=int(rng.integers(1, 4)),
                      dropout=float(rng.choice([0.0, 0.1, 0.3])))
    return head, float(rng.choice([0.0, 1.0, 2.0, 3.0])), rng.dirichlet(np.ones(4))


@pytest.mark.criterion(3)
def test_c3_gradient_checks():
    """Backbone -> [embedding | gamma(coords)] -> head -> focal loss, 60 random configurations."""
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    worst, checked, kinked = 0.0, 0, 0
    kinds = set()
    for trial in range(60):
        head_cfg, gamma, alpha = _chain_config(rng)
        kinds.add(head_cfg.kind)
        bb = MockBackbone.random(seed=trial, scale=0.3, image_shape=(8, 8, 2), patch=4,
                                 dim=int(rng.integers(3, 9)))
        bb.bias = rng.normal(0, 0.1, bb.dim)
        n, L = 4, int(rng.integers(1, 4))
        images = rng.normal(size=(n, 8, 8, 2))
        coords = rng.uniform(-1, 1, size=(n, 4))
        pooled = bb.pool(images)
        enc = build_feature(np.zeros((n, 0)), coords, FourierConfig(L))
        params = init_head(head_cfg, bb.dim + enc.shape[1], rng)
        for k in params:
            if k.startswith("b"):
                params[k] = rng.normal(0.0, 0.3, size=params[k].shape)
        masks = dropout_masks(head_cfg, n, rng)
        y = rng.integers(0, 4, n)

        def loss():
            x = np.concatenate([bb.forward_pooled(pooled), enc], axis=1)
            z, cache = head_forward(head_cfg, params, x, train=True, masks=masks)
            return focal_loss(z, y, alpha, gamma)[0], [p > 0 for p in cache["pres"]]

        x = np.concatenate([bb.forward_pooled(pooled), enc], axis=1)
        z, cache = head_forward(head_cfg, params, x, train=True, masks=masks)
        _, gz = focal_loss(z, y, alpha, gamma)
        hg, gx = head_backward(head_cfg, params, cache, gz)
        bg = bb.backward_pooled(pooled, gx[:, :bb.dim])
        tensors = [(params[k], hg[k]) for k in params] + [(bb.weight, bg["weight"]), (bb.bias, bg["bias"])]
        for arr, grad in tensors:
            idx = _sample(arr, 8, rng)
            an = np.array([grad[i] for i in idx])
            fd, smooth = _fd_entries(loss, arr, idx)
            checked += int(smooth.sum())
            kinked += int((~smooth).sum())
            an, fd = an[smooth], fd[smooth]
            if np.linalg.norm(an) + np.linalg.norm(fd) < 1e-10:
                continue  # entries with no influence on the loss
            err = rel_err(an, fd)
            worst = max(worst, err)
            assert err < 1e-4, (trial, head_cfg, err)
    elapsed = time.perf_counter() - t0
    print(f"worst relative error {worst:.2e}, {checked} entries checked, {kinked} kink-straddling stencils "
          f"excluded, {elapsed:.1f}s")
    assert kinds == {"linear", "skip"}
    assert kinked <= 0.02 * (checked + kinked)
    assert elapsed < 120.0


# -- 4 ------------------------------------------------------------------------

@pytest.mark.criterion(4)
def test_c4_adam_quadratic():
    p = {"x": np.array([0.0])}
    state = AdamState(lr=0.1)
    for _ in range(5000):
        adam_step(p, {"x": 2.0 * (p["x"] - 3.0)}, state)
        if abs(p["x"][0] - 3.0) < 1e-3:
            break
    assert abs(p["x"][0] - 3.0) < 1e-3
    assert state.t <= 5000


@pytest.mark.criterion(4)
def test_c4_adam_zero_gradient_noop():
    rng = np.random.default_rng(4)
    p = {"w": rng.normal(size=(3, 5)), "b": rng.normal(size=5)}
    before = {k: v.copy() for k, v in p.items()}
    state = AdamState(lr=0.1)
    for _ in range(3):
        adam_step(p, {k: np.zeros_like(v) for k, v in p.items()}, state)
    for k in p:
        assert p[k].tobytes() == before[k].tobytes()


# -- 5 ------------------------------------------------------------------------

@pytest.mark.criterion(5)
@pytest.mark.parametrize("name", ["xu2015", "fixture"])
def test_c5_labeler_grid(name):
    cfg = LabelConfig.builtin(name)
    axis = np.linspace(-1.5, 3.0, 10)
    grid = np.array(np.meshgrid(axis, axis, axis, indexing="ij")).reshape(3, -1).T
    assert grid.shape == (1000, 3)
    assert np.array_equal(classify_features(grid, cfg), [plane_oracle(f, cfg) for f in grid])


@pytest.mark.criterion(5)
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_c5_noiseless_streams(seed):
    labels = LabelConfig.builtin()
    s = generate_plasma_stream(SynthConfig().noiseless(), 20_000, start=1_599_999_960.0, seed=seed,
                               label_config=labels)
    lab = preprocess(s.raw, labels)
    assert np.array_equal(lab.grid.timestamp, s.minute_start)
    assert int(np.count_nonzero(lab.label != s.truth)) == 0


# -- 6 ------------------------------------------------------------------------

@pytest.mark.criterion(6)
def test_c6_resampling_oracle():
    rng = np.random.default_rng(6)
    t = np.sort(rng.uniform(0.0, 3.0e6, 100_000))
    v = rng.normal(size=t.size) * 10.0 ** rng.uniform(-3, 3, t.size)
    out = resample_series(t, v, 60.0)
    oracle = brute_force_bins(t, v, 60.0)
    seen = 0
    for start, mean, count in zip(out.bin_start, out.values[:, 0], out.counts[:, 0]):
        if count == 0:
            assert start not in oracle and np.isnan(mean)
            continue
        ref, ref_n = oracle[start]
        assert count == ref_n
        assert abs(mean - ref) <= 1e-12 * max(1.0, abs(ref))
        seen += 1
    assert seen == len(oracle)


@pytest.mark.criterion(6)
def test_c6_gap_fill_flags():
    rng = np.random.default_rng(66)
    t = np.arange(0.0, 6000.0, 10.0)
    keep = np.ones(t.size, dtype=bool)
    # knock out whole minutes of one instrument at a time
    field_gap = rng.choice(np.arange(1, 99), 12, replace=False)
    plasma_gap = rng.choice(np.arange(1, 99), 9, replace=False)
    vals = np.column_stack([rng.uniform(1, 10, t.size), rng.uniform(1e4, 1e5, t.size),
                            rng.uniform(300, 500, t.size), rng.uniform(1, 10, t.size)])
    minute = (t // 60).astype(int)
    vals[np.isin(minute, plasma_gap), :3] = np.nan
    vals[np.isin(minute, field_gap), 3] = np.nan
    series = resample_series(t[keep], vals[keep], 60.0, channels=("n_p", "T_p", "v_sw", "B"))
    grid = fill_gaps(series)
    assert np.array_equal(np.flatnonzero(grid.flag_plasma), np.sort(plasma_gap))
    assert np.array_equal(np.flatnonzero(grid.flag_field), np.sort(field_gap))
    assert np.all(np.isfinite([grid.n_p, grid.T_p, grid.v_sw, grid.B]))


# -- 7 ------------------------------------------------------------------------

@pytest.mark.criterion(7)
def test_c7_reference_backmap():
    fp_lat, fp_lon, tt = backmap(0.5, 0.0, 0.0, 400.0)
    dlon = (0.0 - float(fp_lon) + 180.0) % 360.0 - 180.0
    assert abs(abs(dlon) - 30.0) <= 0.2
    assert float(fp_lat) == 0.0


@pytest.mark.criterion(7)
def test_c7_round_trip_and_monotone():
    rng = np.random.default_rng(7)
    r = rng.uniform(0.05, 1.5, 1000)
    lon = rng.uniform(0, 360, 1000)
    v = rng.uniform(150, 1200, 1000)
    _, fp_lon, tt = backmap(r, np.zeros(1000), lon, v)
    back = unmap_longitude(fp_lon, tt)
    err = np.abs((back - lon + 180.0) % 360.0 - 180.0)
    assert err.max() < 1e-9
    speeds = np.linspace(200.0, 900.0, 100)
    _, fpl, _ = backmap(np.full(100, 0.5), np.zeros(100), np.full(100, 180.0), speeds)
    rotation = fpl - 180.0
    assert np.all(rotation > 0)
    assert np.all(np.diff(rotation) < 0)  # faster wind, smaller rotation


# -- 8 ------------------------------------------------------------------------

def _ts(y, m, d, hh=12):
    return datetime(y, m, d, hh, tzinfo=timezone.utc).timestamp()


@pytest.mark.criterion(8)
@pytest.mark.parametrize("date,split", [((2020, 5, 10), Split.TRAIN), ((2021, 2, 14), Split.VALIDATION),
                                        ((2023, 2, 1), Split.TEST), ((2018, 11, 15), Split.EXCLUDED)])
def test_c8_membership_examples(date, split):
    assert assign_split(_ts(*date)) is split


@pytest.mark.criterion(8)
def test_c8_month_year_scan():
    members = {s: set() for s in Split}
    for year in range(2018, 2025):
        for month in range(1, 13):
            last = calendar.monthrange(year, month)[1]
            # first instant, mid-month and last second all agree
            probes = [datetime(year, month, 1, tzinfo=timezone.utc).timestamp(), _ts(year, month, 15),
                      datetime(year, month, last, 23, 59, 59, tzinfo=timezone.utc).timestamp()]
            got = {assign_split(p) for p in probes}
            assert len(got) == 1
            members[got.pop()].add((year, month))
    named = [members[s] for s in (Split.TRAIN, Split.VALIDATION, Split.TEST)]
    for i in range(3):
        for j in range(i + 1, 3):
            assert not named[i] & named[j]
    assert len(members[Split.TRAIN]) == 45 and len(members[Split.VALIDATION]) == 12
    assert members[Split.TEST] == {(2023, 1), (2023, 2), (2023, 3)}


# -- 9 ------------------------------------------------------------------------

@pytest.mark.criterion(9)
def test_c9_metrics_oracle():
    rng = np.random.default_rng(9)
    for _ in range(1000):
        n = int(rng.integers(1, 200))
        truth = rng.integers(0, 4, n)
        pred = np.where(rng.random(n) < rng.random(), truth, rng.integers(0, 4, n))
        m = Metrics.from_predictions(truth, pred)
        cm, acc, prec, rec, f1 = brute_force_metrics(truth, pred)
        assert m.confusion.tolist() == cm
        assert m.accuracy == acc
        assert m.precision.tolist() == prec and m.recall.tolist() == rec and m.f1.tolist() == f1
        assert m.macro_f1 == sum(f1) / 4


@pytest.mark.criterion(9)
def test_c9_one_class_balanced():
    m = Metrics.from_predictions(np.repeat(np.arange(4), 250), np.full(1000, 2))
    assert m.accuracy == 0.25
    assert m.macro_precision == 0.0625


# -- 10 -----------------------------------------------------------------------

@pytest.mark.criterion(10)
@pytest.mark.slow
def test_c10_end_to_end(default_bundle):
    b = default_bundle
    d = b.dataset
    assert len(d) > 45_000
    t0 = time.perf_counter()
    cfg = TrainConfig(loss="focal", seed=0)
    model = build_model(cfg, d, b.backbone.copy())
    train(model, d, cfg, "finetune")
    elapsed = b.build_seconds + time.perf_counter() - t0
    val = d.for_split(Split.VALIDATION)
    m = evaluate(model, val)
    # Bayes decision on the latent plasma features of the same minutes
    minute = np.searchsorted(b.labeled.grid.timestamp, val.timestamps)
    _, bayes = bayes_oracle(b.config, b.latent[minute])
    bayes_acc = float((bayes == val.labels).mean())
    print(f"val macro-F1 {m.macro_f1:.4f} accuracy {m.accuracy:.4f} bayes {bayes_acc:.4f} {elapsed:.0f}s")
    assert m.macro_f1 >= 0.90
    assert m.accuracy <= bayes_acc
    assert elapsed < 300.0


@pytest.mark.criterion(10)
def test_c10_bayes_bound_with_overlap():
    # overlapping classes make the ceiling bind below 1
    cfg = SynthConfig(class_std=0.15)
    rng = np.random.default_rng(10)

    def draw(n):
        y = rng.choice(4, size=n, p=cfg.mixture)
        return cfg.means()[y] + cfg.class_std * rng.standard_normal((n, 3)), y

    X_tr, y_tr = draw(10_000)
    X_te, y_te = draw(10_000)
    clf = HeadClassifier(hidden=64, epochs=30, lr=3e-3, loss="focal", random_state=0).fit(X_tr, y_tr)
    acc = clf.score(X_te, y_te)
    bayes = float((bayes_oracle(cfg, X_te)[1] == y_te).mean())
    assert bayes < 1.0
    assert acc <= bayes


# -- 11 -----------------------------------------------------------------------

@pytest.mark.criterion(11)
@pytest.mark.slow
def test_c11_strategy_ordering(default_bundle):
    b = default_bundle
    cmp = compare_strategies(TrainConfig(), b.dataset, b.backbone, seeds=(0, 1, 2))
    for seed, row in cmp.summary().items():
        print(seed, row)
    for seed in (0, 1, 2):
        assert cmp.epoch1_random_highest(seed), seed
        assert cmp.finetune_beats_head_only(seed), seed


# -- 12 -----------------------------------------------------------------------

@pytest.mark.criterion(12)
@pytest.mark.parametrize("strategy", ["head-only", "finetune", "random-init"])
def test_c12_determinism(strategy):
    b = build_synthetic_dataset(small_config(segments=(("2019-05-01T00:00:00Z", 1440),
                                                       ("2021-02-10T00:00:00Z", 720))))
    cfg = TrainConfig(epochs=3, finetune_epochs=2, seed=5)
    runs = []
    for _ in range(2):
        model = build_model(cfg, b.dataset, b.backbone.copy())
        res = train(model, b.dataset, cfg, strategy)
        runs.append((res.history.to_csv(), res.checkpoint()))
    assert runs[0][0] == runs[1][0]
    assert runs[0][1] == runs[1][1]


@pytest.mark.criterion(12)
def test_c12_cli_determinism(tmp_path):
    import yaml
    from swfield.cli import main

    cfg = tmp_path / "run.yaml"
    cfg.write_text(yaml.safe_dump({
        "synth": {"segments": [["2019-05-01T00:00:00Z", 1440], ["2021-02-10T00:00:00Z", 720]],
                  "image_shape": [16, 16, 4]},
        "encoding": {"embedding_dim": 16},
        "training": {"epochs": 3},
    }))
    outs = []
    for k in range(2):
        ws = tmp_path / f"w{k}"
        assert main(["synth", "--config", str(cfg), "--out", str(ws / "data")]) == 0
        assert main(["train", "--config", str(cfg), "--data", str(ws / "data"), "--out", str(ws / "runs")]) == 0
        (run,) = (ws / "runs").glob("run-*")
        outs.append({f: (run / f).read_bytes() for f in ("history.csv", "checkpoint.swhp")})
    assert outs[0] == outs[1]
