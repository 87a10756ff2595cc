"""Command-line pipeline: simulate -> curate -> train -> eval, plus the
classical baselines. Exit codes: 0 success, 1 usage or config error,
2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import baselines as bl
from . import dataio
from . import metrics as mx
from .curation import CurationConfig, apply_standardization, curate_recording, \
    standardize, window_sequences
from .dataio import ConfigFileError
from .fusion import FusionConfig, FusionModel, load_checkpoint, manifest_fingerprint, \
    save_checkpoint
from .simulator import SimConfig, floorplan_from_dict, simulate
from .training import TrainConfig, split_dataset, train


class UsageError(ValueError):
    pass


@dataclass
class CurateOptions:
    """Curation-stage knobs (sensor geometry comes from the recording)."""

    poly_order: int = 8
    null_indices: tuple[int, ...] = ()
    window: int = 10
    stride: int = 1
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)


def _resolve_out(out: str) -> Path:
    root = os.environ.get("FUSELOC_OUT_ROOT")
    path = Path(out)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def _load_or_default(cls, config_path):
    if config_path is None:
        return cls()
    return dataio.load_config(cls, config_path)


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    config = _load_or_default(SimConfig, args.config)
    if args.seed is not None:
        config.seed = args.seed
    out = _resolve_out(args.out)
    recording = simulate(config)
    plan = floorplan_from_dict(recording.meta["floorplan"])
    csv_path, manifest_path = dataio.write_recording(recording, out)
    dataio.write_anchors(out / "anchors.csv", plan.wifi_anchors, plan.uwb_anchors)
    print(f"simulated {len(recording)} samples "
          f"({recording.l_wifi} wifi, {recording.l_uwb} uwb anchors) -> {csv_path}")
    print(f"manifest: {manifest_path}")
    return 0


def cmd_curate(args) -> int:
    opts = _load_or_default(CurateOptions, args.config)
    out = _resolve_out(args.out)
    recording = dataio.read_recording(Path(args.recording))
    cur_cfg = CurationConfig(
        n_subcarriers=recording.n_subcarriers,
        null_indices=opts.null_indices,
        poly_order=opts.poly_order,
    )
    dataset = curate_recording(recording, cur_cfg)
    windows = window_sequences(dataset, opts.window, opts.stride)
    n_windows = len(windows)
    if n_windows == 0:
        print(f"warning: recording of {len(dataset)} samples is shorter than one "
              f"window ({opts.window}); curated dataset has no windows")
        split_info = {"window": opts.window, "stride": opts.stride,
                      "fractions": list(opts.split_fractions),
                      "n_windows": 0, "n_train": 0, "n_val": 0, "n_test": 0,
                      "train_end_sample": 0}
        dataio.write_curated(dataset, out, split_info=split_info)
        return 0
    tr, va, te = split_dataset(windows, opts.split_fractions)
    train_end_sample = (tr[-1].start + opts.window) if tr else 0
    split_info = {
        "window": opts.window,
        "stride": opts.stride,
        "fractions": list(opts.split_fractions),
        "n_windows": n_windows,
        "n_train": len(tr),
        "n_val": len(va),
        "n_test": len(te),
        "train_end_sample": train_end_sample,
    }
    stats_src = standardize(dataset, train_end_sample) if train_end_sample else None
    source_manifest = {"sim_config": recording.meta.get("sim_config")}
    csv_path, manifest_path = dataio.write_curated(
        dataset, out, split_info=split_info, source_manifest=source_manifest)
    if stats_src is not None:
        manifest = json.loads(manifest_path.read_text())
        manifest["standardization"] = {
            name: {"mean": m.tolist(), "std": s.tolist()}
            for name, (m, s) in stats_src.stats.items()
        }
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    print(f"curated {len(dataset)} samples; "
          f"{len(cur_cfg.surviving_indices)} surviving subcarriers, order "
          f"{opts.poly_order} fit")
    print(f"windows: {n_windows} total (T={opts.window}, stride={opts.stride}) -> "
          f"{len(tr)}/{len(va)}/{len(te)} train/val/test")
    print(f"curated dataset: {csv_path}")
    return 0


def _standardized_windows(dataset, manifest):
    stats_doc = manifest.get("standardization")
    if stats_doc is None:
        raise dataio.DataFormatError(
            "curated manifest has no standardization statistics")
    stats = {name: (np.asarray(v["mean"]), np.asarray(v["std"]))
             for name, v in stats_doc.items()}
    split = manifest["split"]
    std = apply_standardization(dataset, stats)
    windows = window_sequences(std, split["window"], split["stride"])
    if len(windows) != split["n_windows"]:
        raise dataio.DataFormatError(
            f"window count {len(windows)} does not match manifest {split['n_windows']}")
    tr = windows[:split["n_train"]]
    va = windows[split["n_train"]:split["n_train"] + split["n_val"]]
    te = windows[split["n_train"] + split["n_val"]:]
    return std, tr, va, te


def cmd_train(args) -> int:
    config = _load_or_default(TrainConfig, args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.sensors:
        config.sensors = tuple(s.strip() for s in args.sensors.split(",") if s.strip())
    out = _resolve_out(args.out)
    dataset, manifest = dataio.read_curated(Path(args.dataset))
    split = manifest.get("split")
    if not split or split["n_windows"] == 0:
        raise UsageError("curated dataset has no windows to train on")
    if config.window != split["window"] or config.stride != split["stride"]:
        config.window = split["window"]
        config.stride = split["stride"]
    std, tr, va, _ = _standardized_windows(dataset, manifest)
    unknown = [s for s in config.sensors if s not in std.streams]
    if unknown:
        raise UsageError(f"unknown sensors {unknown}; dataset has {sorted(std.streams)}")

    dims = std.stream_dims()
    fusion_cfg = FusionConfig(
        sensors=config.sensors,
        input_dims={s: dims[s] for s in config.sensors},
        n_hidden=config.n_hidden,
        n_layers=config.n_layers,
        bidirectional=config.bidirectional,
        dropout=config.dropout,
        history=config.history,
        window=config.window,
    )
    init_rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(3)[2])
    model = FusionModel(fusion_cfg, init_rng)
    result = train(model, tr, va, config, log_every=args.log_every)

    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / "checkpoint.json"
    save_checkpoint(model, ckpt_path, manifest_hash=manifest_fingerprint(manifest),
                    extra={"best_val_mse": result.best_val_mse,
                           "best_iteration": result.best_iteration,
                           "seed": config.seed,
                           "sensors": list(config.sensors)})
    hist_path = out / "loss_history.csv"
    with open(hist_path, "w") as fh:
        fh.write("iteration,train_mse,val_mse\n")
        for it, tmse, vmse in result.history:
            fh.write(f"{it},{tmse!r},{'' if vmse is None else repr(vmse)}\n")
    print(f"trained {len(config.sensors)}-stream model for {len(result.history)} "
          f"iterations; best val mse {result.best_val_mse:.6f} "
          f"at iteration {result.best_iteration}")
    print(f"checkpoint: {ckpt_path}")
    print(f"loss history: {hist_path}")
    return 0


def cmd_eval(args) -> int:
    out = _resolve_out(args.out)
    model, header = load_checkpoint(Path(args.checkpoint))
    dataset, manifest = dataio.read_curated(Path(args.dataset))
    fingerprint = manifest_fingerprint(manifest)
    if header["manifest_hash"] and header["manifest_hash"] != fingerprint:
        raise UsageError(
            "checkpoint was trained on a different curated dataset "
            f"(manifest hash {header['manifest_hash']} != {fingerprint})")
    std, tr, va, te = _standardized_windows(dataset, manifest)
    windows = {"train": tr, "val": va, "test": te}[args.split]
    if not windows:
        raise UsageError(f"no {args.split} windows in this dataset")

    preds = np.zeros((len(windows), 2))
    alphas = np.zeros((len(windows), len(model.config.sensors)))
    targets = np.stack([w.target for w in windows])
    starts = [w.start for w in windows]
    for lo in range(0, len(windows), 256):
        chunk = windows[lo:lo + 256]
        batch = {s: np.stack([w.streams[s] for w in chunk])
                 for s in model.config.sensors}
        p, a = model.forward(batch, mode="eval")
        preds[lo:lo + len(chunk)] = p.data
        alphas[lo:lo + len(chunk)] = a.data

    errors = mx.euclidean_errors(preds, targets)
    summary = mx.summarize(errors)
    out.mkdir(parents=True, exist_ok=True)
    _write_metrics(out, {"model": summary})
    curve = mx.cdf_curve(errors)
    with open(out / "cdf.csv", "w") as fh:
        fh.write("error_m,cdf\n")
        for e, c in curve:
            fh.write(f"{e!r},{c!r}\n")
    with open(out / "alpha.csv", "w") as fh:
        fh.write("window_start," + ",".join(f"alpha_{s}" for s in model.config.sensors) + "\n")
        for start, row in zip(starts, alphas):
            fh.write(f"{start}," + ",".join(repr(v) for v in row) + "\n")
    print(mx.format_summary_table({"model": summary}))
    print(f"metrics under {out}")
    return 0


BASELINE_METHODS = ("uwb-tri", "rssi-tri", "rssi-fp", "csi-fp")


def _write_metrics(out: Path, rows: dict[str, mx.MetricsSummary]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.txt").write_text(mx.format_summary_table(rows) + "\n")
    with open(out / "metrics.csv", "w") as fh:
        fh.write("method,mean_m,median_m,cdf90_m,count\n")
        for name, s in rows.items():
            fh.write(f"{name},{s.mean!r},{s.median!r},{s.cdf90!r},{s.count}\n")


def cmd_baseline(args) -> int:
    out = _resolve_out(args.out)
    dataset, manifest = dataio.read_curated(Path(args.dataset))
    split = manifest.get("split")
    if not split or split["n_windows"] == 0:
        raise UsageError("curated dataset has no windows; run curate first")
    anchors = dataio.read_anchors(Path(args.anchors)) if args.anchors else {}
    window = split["window"]
    stride = split["stride"]
    n_train, n_val = split["n_train"], split["n_val"]
    starts = list(range(0, len(dataset) - window + 1, stride))
    test_rows = [s + window - 1 for s in starts[n_train + n_val:]]
    train_rows = np.arange(split["train_end_sample"])
    if not test_rows:
        raise UsageError("no test windows in this dataset")

    method = args.method
    coords = dataset.coords
    if method in ("uwb-tri", "rssi-tri") and not anchors:
        raise UsageError(f"{method} needs --anchors")
    if method == "uwb-tri":
        estimates = _uwb_trilateration(dataset, anchors, test_rows)
    elif method == "rssi-tri":
        estimates = _rssi_trilateration(dataset, anchors, train_rows, test_rows)
    else:
        stream = {"rssi-fp": "rssi", "csi-fp": "csi"}[method]
        estimates = _fingerprint(dataset, manifest, stream, train_rows, test_rows)

    truths = coords[test_rows]
    summary = mx.summarize(mx.euclidean_errors(estimates, truths))
    _write_metrics(out, {method: summary})
    print(mx.format_summary_table({method: summary}))
    return 0


def _uwb_trilateration(dataset, anchors, test_rows) -> np.ndarray:
    uwb_anchors = anchors.get("uwb", {})
    if len(uwb_anchors) < 3:
        raise UsageError(f"need at least 3 uwb anchors, got {len(uwb_anchors)}")
    amap = bl.AnchorMap(uwb_anchors)
    l_u = dataset.l_uwb
    stream = dataset.streams["uwb"]
    ids = sorted(uwb_anchors, key=lambda s: int(s.rsplit("_", 1)[1]))
    centroid = amap.array().mean(axis=0)
    estimates = np.zeros((len(test_rows), 2))
    for i, row in enumerate(test_rows):
        ranges = {}
        for j, aid in enumerate(ids):
            if stream[row, 2 * l_u + j] > 0:  # validity mask
                ranges[aid] = float(stream[row, j])
        if len(ranges) < 3:
            estimates[i] = centroid
            continue
        estimates[i] = bl.trilaterate(ranges, amap).position
    return estimates


def _rssi_trilateration(dataset, anchors, train_rows, test_rows) -> np.ndarray:
    wifi_anchors = anchors.get("wifi", {})
    if len(wifi_anchors) < 3:
        raise UsageError(f"need at least 3 wifi anchors, got {len(wifi_anchors)}")
    amap = bl.AnchorMap(wifi_anchors)
    l_w = dataset.l_wifi
    stream = dataset.streams["rssi"]
    ids = sorted(wifi_anchors, key=lambda s: int(s.rsplit("_", 1)[1]))
    models = {}
    for j, aid in enumerate(ids):
        valid = stream[train_rows, l_w + j] > 0
        rows = train_rows[valid]
        dists = np.linalg.norm(dataset.coords[rows] - amap.positions[aid], axis=1)
        models[aid] = bl.fit_path_loss(dists, stream[rows, j])
    centroid = amap.array().mean(axis=0)
    estimates = np.zeros((len(test_rows), 2))
    for i, row in enumerate(test_rows):
        ranges = {}
        for j, aid in enumerate(ids):
            if stream[row, l_w + j] > 0:
                ranges[aid] = float(bl.rssi_to_range(stream[row, j], models[aid]))
        if len(ranges) < 3:
            estimates[i] = centroid
            continue
        estimates[i] = bl.trilaterate(ranges, amap).position
    return estimates


def _fingerprint(dataset, manifest, stream_name, train_rows, test_rows) -> np.ndarray:
    stats_doc = manifest.get("standardization")
    if stats_doc is None:
        raise UsageError("curated manifest has no standardization statistics")
    stats = {name: (np.asarray(v["mean"]), np.asarray(v["std"]))
             for name, v in stats_doc.items()}
    std = apply_standardization(dataset, stats)
    features = std.streams[stream_name]
    database = features[train_rows]
    db_coords = dataset.coords[train_rows]
    estimates = np.zeros((len(test_rows), 2))
    for i, row in enumerate(test_rows):
        estimates[i] = bl.knn_fingerprint(features[row], database, db_coords, k=2)
    return estimates


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that exits 1 on usage errors (2 is runtime failure)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def build_parser() -> _Parser:
    parser = _Parser(prog="fuseloc",
                     description="multi-modal indoor localization pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[], help="generate a synthetic recording")
    p.add_argument("--config", help="key=value simulation config")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("curate", help="curate a recording into feature streams")
    p.add_argument("--recording", required=True, help="directory with recording.csv")
    p.add_argument("--config", help="key=value curation config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("train", help="train a fusion model on a curated dataset")
    p.add_argument("--dataset", required=True, help="curated dataset directory")
    p.add_argument("--config", help="key=value training config")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--sensors", help="comma-separated sensor subset, e.g. rssi,uwb,imu")
    p.add_argument("--out", required=True)
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a curated dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="run a classical baseline")
    p.add_argument("--method", required=True, choices=BASELINE_METHODS)
    p.add_argument("--dataset", required=True)
    p.add_argument("--anchors", help="anchor map CSV (required for trilateration)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (UsageError, ConfigFileError) as exc:
        print(f"fuseloc: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"fuseloc: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
