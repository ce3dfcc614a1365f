"""Command-line entry point: ``swfield <subcommand> [options]``.

Exit codes: 0 success, 1 unexpected error, 2 bad configuration,
3 missing input, 4 numeric divergence.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from swfield import config as runcfg
from swfield.connectivity import (
    ImageIndex, PairingReport, assign_splits, backmap, forward_fill, pair_indices, read_image_index,
    write_image_index,
)
from swfield.encoding import EmbeddingStore, MockBackbone, write_embedding_store
from swfield.harness.config import STRATEGIES, TrainConfig
from swfield.harness.dataset import (
    EXAMPLE_HEADER, FieldDataset, distribution_table, read_examples_csv, undersample,
)
from swfield.harness.experiments import (
    backbone_digest, collect_runs, dataset_digest, ranked_csv, run_one, split_metrics, sweep,
)
from swfield.harness.training import DivergenceError, FieldModel
from swfield.neural.checkpoint import load_checkpoint, save_checkpoint
from swfield.plasma import (
    LabeledGrid, PlasmaGrid, WindClass, class_counts, concat_grids, fill_gaps, format_time, label_grid,
    parse_time, read_grid_csv, read_raw_csv, resample_raw, split_segments, write_grid_csv,
    write_labeled_csv, write_raw_csv,
)

logger = logging.getLogger("swfield")

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_MISSING, EXIT_DIVERGED = 0, 1, 2, 3, 4

POSITIONS_HEADER = ("timestamp_utc", "r_au", "lat_deg", "lon_deg")
FOOTPOINT_HEADER = ("timestamp_utc", "sc_r_au", "sc_lat", "sc_lon", "fp_lat", "fp_lon", "travel_time_s")


class MissingInputError(FileNotFoundError):
    pass


def _need(path: Path) -> Path:
    if not path.exists():
        raise MissingInputError(f"missing input: {path}")
    return path


def _emit(payload: dict) -> None:
    sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Workspace I/O
# ---------------------------------------------------------------------------

def write_positions_csv(path: Path, t, r, lat, lon) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POSITIONS_HEADER)
        for row in zip(t, r, lat, lon):
            w.writerow([format_time(row[0])] + [repr(float(x)) for x in row[1:]])


def read_positions_csv(path: Path):
    with open(_need(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path} has no positions")
    t = np.array([parse_time(r["timestamp_utc"]) for r in rows])
    cols = [np.array([float(r[c]) for r in rows]) for c in POSITIONS_HEADER[1:]]
    order = np.argsort(t, kind="stable")
    return (t[order], *(c[order] for c in cols))


def read_footpoints_csv(path: Path) -> dict:
    with open(_need(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = {"timestamp": np.array([parse_time(r["timestamp_utc"]) for r in rows])}
    for c in FOOTPOINT_HEADER[1:]:
        out[c] = np.array([float(r[c]) for r in rows])
    return out


def _read_truth(path: Path) -> dict[float, int] | None:
    if not path.exists():
        return None
    with open(path, newline="") as fh:
        return {parse_time(r["timestamp_utc"]): int(WindClass.from_slug(r["truth"])) for r in csv.DictReader(fh)}


def load_workspace(data: Path, cfg: dict) -> tuple[FieldDataset, MockBackbone | None]:
    """Examples plus either raw images with a pretrained backbone or a frozen embedding store."""
    index = read_image_index(_need(data / "image_index.csv"))
    ds = read_examples_csv(_need(data / "examples.csv"), index.keys)
    images, bb_path = data / "images.npy", data / "backbone.swhp"
    if images.exists() and bb_path.exists():
        ds.images = np.load(images)
        tensors, _ = load_checkpoint(bb_path)
        patch = int(cfg["encoding"]["patch"])
        bb = MockBackbone(ds.images.shape[1:], patch, tensors["weight"].shape[0],
                          tensors["weight"].astype(float), tensors["bias"].astype(float))
        return ds, bb
    store = EmbeddingStore(_need(data / "embeddings.sweb"))
    ds.embeddings = np.stack([store.read_at(int(o)) for o in index.offsets]).astype(float)
    return ds, None


# ---------------------------------------------------------------------------
# Pipeline steps (shared by subcommands and ``synth``)
# ---------------------------------------------------------------------------

def resample_file(raw_path: Path, cfg: dict) -> PlasmaGrid:
    raw = read_raw_csv(_need(raw_path))
    p = cfg["plasma"]
    return concat_grids([fill_gaps(resample_raw(seg, float(p["cadence_s"])))
                         for seg in split_segments(raw, float(p["max_gap_s"]))])


def label_file(path: Path, cfg: dict) -> LabeledGrid:
    with open(_need(path)) as fh:
        header = fh.readline()
    grid = read_grid_csv(path)[0] if "instrument" not in header else resample_file(path, cfg)
    return label_grid(grid, runcfg.label_config(cfg))


def map_footpoints(labeled_path: Path, positions_path: Path, cfg: dict) -> dict:
    grid, _ = read_grid_csv(_need(labeled_path))
    t, r, lat, lon = read_positions_csv(positions_path)
    rr, la, lo = (forward_fill(t, x, grid.timestamp) for x in (r, lat, lon))
    fp_lat, fp_lon, tt = backmap(rr, la, lo, grid.v_sw, runcfg.backmap_params(cfg))
    return {"timestamp": grid.timestamp, "sc_r_au": rr, "sc_lat": la, "sc_lon": lo,
            "fp_lat": fp_lat, "fp_lon": fp_lon, "travel_time_s": tt}


def write_footpoints(path: Path, fp: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FOOTPOINT_HEADER)
        for i in range(len(fp["timestamp"])):
            w.writerow([format_time(fp["timestamp"][i])] + [repr(float(fp[c][i])) for c in FOOTPOINT_HEADER[1:]])


def pair_files(labeled_path: Path, footpoints_path: Path, index_path: Path, cfg: dict,
               truth_path: Path | None = None) -> tuple[list[list], PairingReport]:
    grid, labels = read_grid_csv(_need(labeled_path))
    if labels is None:
        raise ValueError(f"{labeled_path} carries no labels; run `label` first")
    fp = read_footpoints_csv(footpoints_path)
    if not np.array_equal(fp["timestamp"], grid.timestamp):
        raise ValueError("footpoints and labeled grid are not aligned")
    index = read_image_index(_need(index_path))
    idx = pair_indices(grid.timestamp, fp["travel_time_s"], index.keys,
                       float(cfg["connectivity"]["pair_tolerance_s"]))
    splits = assign_splits(grid.timestamp, runcfg.split_rules(cfg))
    truth = _read_truth(truth_path) if truth_path is not None else None
    interp = grid.flag_field | grid.flag_plasma
    rows = []
    n_excluded = n_invalid = 0
    for i in range(len(grid)):
        if idx[i] < 0:
            continue
        if labels[i] < 0:
            n_invalid += 1
            continue
        if splits[i].value == "excluded":
            n_excluded += 1
            continue
        tr = "" if truth is None else WindClass(truth[grid.timestamp[i]]).slug
        rows.append([format_time(grid.timestamp[i]), format_time(index.keys[idx[i]]), int(idx[i]),
                     repr(float(fp["sc_r_au"][i])), repr(float(fp["sc_lat"][i])), repr(float(fp["sc_lon"][i])),
                     repr(float(fp["fp_lat"][i])), repr(float(fp["fp_lon"][i])),
                     repr(float(fp["travel_time_s"][i])), WindClass(int(labels[i])).slug,
                     splits[i].value, int(interp[i]), tr])
    n_paired = int((idx >= 0).sum())
    report = PairingReport(len(grid), n_paired, len(grid) - n_paired, [
        f"{n_invalid} paired minutes without a valid label dropped",
        f"{n_excluded} paired minutes outside every split dropped",
        "spacecraft positions are treated as a low-cadence series forward-filled to 1 minute",
    ])
    return rows, report


def write_examples(path: Path, rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EXAMPLE_HEADER)
        w.writerows(rows)


def run_chain(ws: Path, cfg: dict, truth: bool = False) -> PairingReport:
    """label -> map-footpoints -> pair inside one workspace directory."""
    labeled = label_file(ws / "raw.csv", cfg)
    write_labeled_csv(ws / "labeled.csv", labeled)
    write_footpoints(ws / "footpoints.csv", map_footpoints(ws / "labeled.csv", ws / "positions.csv", cfg))
    rows, report = pair_files(ws / "labeled.csv", ws / "footpoints.csv", ws / "image_index.csv", cfg,
                              ws / "truth.csv" if truth else None)
    write_examples(ws / "examples.csv", rows)
    (ws / "pairing_report.json").write_text(json.dumps(report.__dict__, indent=2, sort_keys=True))
    return report


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _out(args, default: str) -> Path:
    out = Path(args.out) if args.out else Path(default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_resample(args, cfg) -> int:
    grid = resample_file(Path(args.input), cfg)
    out = _out(args, ".")
    write_grid_csv(out / "resampled.csv", grid)
    _emit({"output": str(out / "resampled.csv"), "minutes": len(grid),
           "interpolated_field": int(grid.flag_field.sum()), "interpolated_plasma": int(grid.flag_plasma.sum())})
    return EXIT_OK


def cmd_label(args, cfg) -> int:
    labeled = label_file(Path(args.input), cfg)
    out = _out(args, ".")
    write_labeled_csv(out / "labeled.csv", labeled)
    counts = class_counts(labeled.label[labeled.valid])
    logger.info("labeled %d minutes: %s", len(labeled.label), counts)
    _emit({"output": str(out / "labeled.csv"), "counts": counts, "invalid": int((~labeled.valid).sum())})
    return EXIT_OK


def cmd_map_footpoints(args, cfg) -> int:
    if not args.positions:
        raise MissingInputError("--positions is required")
    fp = map_footpoints(Path(args.input), Path(args.positions), cfg)
    out = _out(args, ".")
    write_footpoints(out / "footpoints.csv", fp)
    _emit({"output": str(out / "footpoints.csv"), "minutes": len(fp["timestamp"])})
    return EXIT_OK


def cmd_pair(args, cfg) -> int:
    if not (args.footpoints and args.image_index):
        raise MissingInputError("--footpoints and --image-index are required")
    rows, report = pair_files(Path(args.input), Path(args.footpoints), Path(args.image_index), cfg)
    out = _out(args, ".")
    write_examples(out / "examples.csv", rows)
    (out / "pairing_report.json").write_text(json.dumps(report.__dict__, indent=2, sort_keys=True))
    _emit({"output": str(out / "examples.csv"), "examples": len(rows), **report.__dict__})
    return EXIT_OK


def cmd_synth(args, cfg) -> int:
    from swfield.synth import bayes_oracle, build_synthetic_dataset

    ws = _out(args, cfg["paths"]["data"])
    sc = runcfg.synth_config(cfg)
    bundle = build_synthetic_dataset(sc, runcfg.label_config(cfg), runcfg.backmap_params(cfg),
                                     runcfg.split_rules(cfg), int(cfg["encoding"]["embedding_dim"]),
                                     int(cfg["encoding"]["patch"]))
    write_raw_csv(ws / "raw.csv", bundle.raw)
    pos = bundle.positions
    write_positions_csv(ws / "positions.csv", pos.timestamp, pos.r, pos.lat, pos.lon)
    ds = bundle.dataset
    np.save(ws / "images.npy", ds.images)
    save_checkpoint(ws / "backbone.swhp", bundle.backbone.params())
    emb = bundle.backbone.forward_pooled(ds.pooled(bundle.backbone.patch))
    offsets = write_embedding_store(ws / "embeddings.sweb", ds.image_keys, emb)
    write_image_index(ws / "image_index.csv", ImageIndex(ds.image_keys, offsets))
    with open(ws / "truth.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp_utc", "truth"])
        for t, c in zip(bundle.labeled.grid.timestamp, bundle.truth):
            w.writerow([format_time(t), WindClass(int(c)).slug])
    report = run_chain(ws, cfg, truth=True)
    _, bayes = bayes_oracle(sc, bundle.latent)
    summary = {
        "minutes": int(len(bundle.truth)),
        "examples": report.n_paired,
        "images": int(len(ds.image_keys)),
        "bayes_accuracy": float((bayes == bundle.truth).mean()),
        "labeler_accuracy": float((bundle.labeled.label == bundle.truth).mean()),
        "distribution": distribution_table(read_examples_csv(ws / "examples.csv", ds.image_keys)),
        "notes": bundle.notes,
    }
    (ws / "synth_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    _emit({"workspace": str(ws), **{k: summary[k] for k in ("minutes", "examples", "bayes_accuracy")}})
    return EXIT_OK


def _strategy(args, cfg) -> str:
    return args.strategy or cfg["training"]["strategy"]


def cmd_train(args, cfg) -> int:
    data = Path(args.data or cfg["paths"]["data"])
    ds, bb = load_workspace(data, cfg)
    tc = runcfg.train_config(cfg)
    out = _out(args, cfg["paths"]["runs"])
    result, run = run_one(tc, ds, _strategy(args, cfg), out, bb,
                          {"run_config": cfg, "data_dir": str(data)})
    metrics = json.loads((run / "metrics.json").read_text())["metrics"]
    _emit({"run": str(run), "best_val_loss": result.best_val_loss,
           "stopping_epoch": result.history.stopping_epoch,
           "val_macro_f1": metrics.get("validation", {}).get("macro_f1")})
    return EXIT_OK


def load_run(run: Path, ds: FieldDataset, bb: MockBackbone | None) -> FieldModel:
    import yaml

    resolved = yaml.safe_load(_need(run / "config.resolved").read_text())
    tc = TrainConfig.from_dict(resolved["train"])
    model = FieldModel.build(tc, backbone=bb.copy() if bb is not None else None,
                             embedding_dim=None if bb is not None else ds.embeddings.shape[1])
    model.load_checkpoint(_need(run / "checkpoint.swhp").read_bytes())
    return model


def cmd_eval(args, cfg) -> int:
    if not args.run:
        raise MissingInputError("--run is required")
    run = Path(args.run)
    data = Path(args.data or cfg["paths"]["data"])
    ds, bb = load_workspace(data, cfg)
    model = load_run(run, ds, bb)
    metrics = split_metrics(model, ds)
    out = _out(args, str(run / "eval"))
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True))
    _emit({"output": str(out / "metrics.json"),
           **{f"{k}_macro_f1": v["macro_f1"] for k, v in metrics.items()}})
    return EXIT_OK


def cmd_sweep(args, cfg) -> int:
    data = Path(args.data or cfg["paths"]["data"])
    ds, bb = load_workspace(data, cfg)
    out = _out(args, str(Path(cfg["paths"]["runs"]) / "sweep"))
    strategy = args.strategy or cfg["sweep"]["strategy"]
    res = sweep(runcfg.sweep_grid(cfg), runcfg.train_config(cfg), ds, out, strategy, bb)
    best = res.ranked()[0] if res.rows else None
    _emit({"sweep": str(out), "cells": len(res.rows), "trained": len(res.trained),
           "skipped": len(res.skipped), "best": best.run if best else None})
    return EXIT_OK


REPORT_NOTES = (
    "alpha entries map to classes in descending reference frequency order "
    "(streamer_belt, sector_reversal, coronal_hole, ejecta) unless loss.alpha_order says otherwise",
    "spacecraft positions are treated as a low-cadence series forward-filled to 1 minute",
    "footpoints use a ballistic backmap in place of a coronal field model",
)


def cmd_report(args, cfg) -> int:
    if not (args.sweep or args.data):
        raise MissingInputError("report needs --sweep and/or --data")
    out = _out(args, ".")
    payload: dict = {"notes": list(REPORT_NOTES)}
    if args.sweep:
        sweep_dir = Path(args.sweep)
        _need(sweep_dir)
        rows = collect_runs(sweep_dir)
        (out / "report.csv").write_text(ranked_csv(rows))
        payload["ranking"] = str(out / "report.csv")
        payload["best"] = rows[0].run if rows else None
        sys.stderr.write(ranked_csv(rows))
    if args.data:
        data = Path(args.data)
        index = read_image_index(_need(data / "image_index.csv"))
        ds = read_examples_csv(_need(data / "examples.csv"), index.keys)
        table = distribution_table(ds)
        with open(out / "distribution.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["split", "total"] + [c.slug for c in WindClass],
                               lineterminator="\n")
            w.writeheader()
            w.writerows(table)
        payload["distribution"] = table
    (out / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    _emit(payload)
    return EXIT_OK


def cmd_export_embeddings(args, cfg) -> int:
    data = Path(args.data or cfg["paths"]["data"])
    ds, bb = load_workspace(data, cfg)
    if args.run:
        table = load_run(Path(args.run), ds, bb).embedding_table(ds)
    elif bb is not None:
        table = bb.forward_pooled(ds.pooled(bb.patch))
    else:
        table = ds.embeddings
    out = _out(args, ".")
    write_embedding_store(out / "embeddings.sweb", ds.image_keys, table)
    pick = undersample(ds.labels, int(cfg["seed"]))
    with open(out / "embeddings_balanced.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp_utc", "image_key_utc", "label", "split"] + [f"e{i}" for i in range(table.shape[1])])
        for i in pick:
            row = ds.image_index[i]
            w.writerow([format_time(ds.timestamps[i]), format_time(ds.image_keys[row]),
                        WindClass(int(ds.labels[i])).slug, ds.split[i].value]
                       + [repr(float(x)) for x in table[row]])
    _emit({"store": str(out / "embeddings.sweb"), "balanced_rows": int(len(pick))})
    return EXIT_OK


COMMANDS = {
    "resample": cmd_resample, "label": cmd_label, "map-footpoints": cmd_map_footpoints,
    "pair": cmd_pair, "synth": cmd_synth, "train": cmd_train, "eval": cmd_eval,
    "sweep": cmd_sweep, "report": cmd_report, "export-embeddings": cmd_export_embeddings,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="overrides the configured seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--strategy", choices=STRATEGIES)
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="swfield", description="Solar wind source classification pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name in ("resample", "label", "map-footpoints", "pair"):
            p.add_argument("input", help="input CSV")
        if name == "map-footpoints":
            p.add_argument("--positions", help="spacecraft positions CSV")
        if name == "pair":
            p.add_argument("--footpoints", help="footpoints CSV")
            p.add_argument("--image-index", dest="image_index", help="image index CSV")
        if name in ("train", "eval", "sweep", "export-embeddings"):
            p.add_argument("--data", help="workspace directory")
        if name in ("eval", "export-embeddings"):
            p.add_argument("--run", help="run directory")
        if name == "report":
            p.add_argument("--sweep", help="sweep directory")
            p.add_argument("--data", help="workspace directory")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config and not Path(args.config).exists():
            raise MissingInputError(f"missing config file: {args.config}")
        cfg = runcfg.resolve(args.config, args.set, args.seed)
    except runcfg.ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    except MissingInputError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_MISSING
    try:
        return COMMANDS[args.command](args, cfg)
    except runcfg.ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    except MissingInputError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_MISSING
    except FileNotFoundError as exc:
        sys.stderr.write(f"missing input: {exc}\n")
        return EXIT_MISSING
    except DivergenceError as exc:
        sys.stderr.write(f"diverged: {exc} (after {exc.history.stopping_epoch} epochs)\n")
        return EXIT_DIVERGED
    except Exception as exc:  # noqa: BLE001
        logger.exception("unexpected failure")
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
