"""Command-line surface: synth | preprocess | train | interpret | table1 | activations."""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_run_config
from .data import (
    Atlas,
    ChannelImage,
    DataError,
    Dataset,
    atomic_write_bytes,
    atomic_write_text,
    load_atlas,
    load_dataset,
    save_atlas,
    save_dataset,
)
from .interpret import interpret_dataset, write_reports
from .nifti import load_nifti
from .nn import activation_maps, build_2cc3d, build_synth_cnn, load_model, save_model, train
from .preprocess import downsample, sliding_window_channels
from .synthgen import generate_synthetic, run_table1


def _path_from(cfg: RunConfig, key: str, flag_value: str | None, flag: str) -> Path:
    if flag_value:
        return Path(flag_value)
    if key in cfg.paths:
        return Path(cfg.paths[key])
    raise ConfigError(f"no '{key}' path given (set paths.{key} in the config or pass {flag})")


def _load_any_atlas(path: Path) -> Atlas:
    if path.suffix == ".nii":
        series = load_nifti(path)
        labels = np.rint(series[..., 0]).astype(np.int64)
        return Atlas(labels=labels)
    return load_atlas(path)


def cmd_synth(cfg: RunConfig, args: argparse.Namespace) -> int:
    out = Path(cfg.out_dir)
    train_ds, test_ds, atlas = generate_synthetic(cfg.synth)
    train_path = save_dataset(train_ds, out / "train")
    test_path = save_dataset(test_ds, out / "test")
    atlas_path = save_atlas(atlas, out)
    print(
        f"wrote {len(train_ds)} train images ({train_ds.labels.count(0)}/{train_ds.labels.count(1)} "
        f"per class) to {train_path}"
    )
    print(f"wrote {len(test_ds)} test images to {test_path}")
    print(f"wrote atlas ({len(atlas.roi_ids)} ROIs) to {atlas_path}")
    return 0


def cmd_preprocess(cfg: RunConfig, args: argparse.Namespace) -> int:
    if cfg.window is None:
        raise ConfigError("preprocess needs a 'window' section with 'w' and 'stride'")
    nifti_path = _path_from(cfg, "nifti", args.nifti, "--nifti")
    series = load_nifti(nifti_path)
    if cfg.target_shape is not None:
        frames = [downsample(series[..., t], cfg.target_shape) for t in range(series.shape[3])]
        series = np.stack(frames, axis=-1)
    images = sliding_window_channels(series, cfg.window)
    subject = args.subject or nifti_path.stem
    new = Dataset(
        images=images,
        labels=[args.label] * len(images),
        subject_ids=[subject] * len(images),
        manifest={"source": str(nifti_path), "w": cfg.window.w, "stride": cfg.window.stride},
    )
    out_dir = Path(cfg.out_dir) / "dataset"
    if args.append and (out_dir / "manifest.json").exists():
        old = load_dataset(out_dir / "manifest.json")
        new = Dataset(
            images=old.images + new.images,
            labels=old.labels + new.labels,
            subject_ids=old.subject_ids + new.subject_ids,
            manifest=old.manifest,
        )
    manifest = save_dataset(new, out_dir)
    print(f"wrote {len(images)} window images for subject '{subject}' to {manifest}")
    return 0


def _build_network(cfg: RunConfig, data: Dataset):
    spatial = data.spatial_shape
    arch = cfg.arch
    if arch == "auto":
        arch = "synth_cnn" if len(spatial) == 2 else "cnn3d"
    if arch == "synth_cnn":
        if len(spatial) != 2:
            raise ConfigError(f"arch 'synth_cnn' needs 2D images, got spatial shape {spatial}")
        return build_synth_cnn((data.channels,) + spatial, seed=cfg.seed)
    if len(spatial) != 3:
        raise ConfigError(f"arch 'cnn3d' needs 3D images, got spatial shape {spatial}")
    return build_2cc3d(
        (data.channels,) + spatial,
        filters=cfg.cnn3d_filters,
        hidden=cfg.cnn3d_hidden,
        seed=cfg.seed,
    )


def cmd_train(cfg: RunConfig, args: argparse.Namespace) -> int:
    train_ds = load_dataset(_path_from(cfg, "train_manifest", args.train_manifest, "--train-manifest"))
    val_ds = load_dataset(_path_from(cfg, "val_manifest", args.val_manifest, "--val-manifest"))
    if args.resume:
        net = load_model(Path(args.resume))
    else:
        net = _build_network(cfg, train_ds)
    net, history = train(net, train_ds, val_ds, cfg.train)
    out = Path(cfg.out_dir)
    model_path = save_model(net, out / "model")
    atomic_write_text(out / "history.json", json.dumps(history, indent=2, sort_keys=True) + "\n")
    print(
        f"trained {history['epochs_run']} epochs (best {history['best_epoch']}): "
        f"train acc {history['train_acc'][-1]:.3f}, val acc {history['val_acc'][-1]:.3f}"
    )
    print(f"wrote model to {model_path}")
    return 0


def cmd_interpret(cfg: RunConfig, args: argparse.Namespace) -> int:
    net = load_model(_path_from(cfg, "model", args.model, "--model"))
    data = load_dataset(_path_from(cfg, "dataset", args.dataset, "--dataset"))
    atlas = _load_any_atlas(_path_from(cfg, "atlas", args.atlas, "--atlas"))
    reports = interpret_dataset(net.predict_batch, data, atlas, cfg.interpret, threads=cfg.threads)
    json_path, csv_path = write_reports(reports, Path(cfg.out_dir))
    counts = {c: 0 for c in ("both", "class0", "class1", "none")}
    for r in reports:
        counts[r.category] += 1
    print(
        f"{len(reports)} ROIs: {counts['both']} both, {counts['class0']} class0, "
        f"{counts['class1']} class1, {counts['none']} none"
    )
    print(f"wrote {json_path} and {csv_path}")
    return 0


def _table1_csv(result) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["weight_mode", "class0_mean", "class0_std", "class1_mean", "class1_std"])
    for row in result.rows:
        writer.writerow(
            [row.weight_mode, repr(row.class0_mean), repr(row.class0_std),
             repr(row.class1_mean), repr(row.class1_std)]
        )
    return buf.getvalue()


def _run_sweep(cfg: RunConfig, out: Path) -> Path:
    """Grid evaluation of ROI categories over (alpha_jsd, alpha_w)."""
    train_ds, test_ds, atlas = generate_synthetic(cfg.synth)
    net = _build_network(cfg, train_ds)
    net, _ = train(net, train_ds, test_ds, cfg.train)
    sampling = replace(cfg.sampling, exclude_own_subject=False)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["alpha_jsd", "alpha_w", "roi_id", "fooled", "category"])
    for a_jsd in cfg.sweep_alpha_jsd:
        for a_w in cfg.sweep_alpha_w:
            icfg = replace(cfg.interpret, alpha_jsd=a_jsd, alpha_w=a_w, sampling=sampling)
            reports = interpret_dataset(net.predict_batch, test_ds, atlas, icfg, threads=cfg.threads)
            for r in reports:
                writer.writerow([a_jsd, a_w, r.roi_id, "true" if r.fooled else "false", r.category])
    path = out / "sweep.csv"
    atomic_write_text(path, buf.getvalue())
    return path


def cmd_table1(cfg: RunConfig, args: argparse.Namespace) -> int:
    result = run_table1(cfg.synth, cfg.sampling, cfg.table1_repeats, cfg.train)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "table1.csv"
    atomic_write_text(path, _table1_csv(result))
    print(result.as_text())
    for line in result.diagnostics:
        print(f"note: {line}")
    print(f"wrote {path}")
    if args.sweep:
        sweep_path = _run_sweep(cfg, out)
        print(f"wrote {sweep_path}")
    return 0


def _write_pgm(path: Path, spatial_map: np.ndarray) -> None:
    """Grayscale preview: the map itself in 2D, its middle slice in 3D."""
    plane = spatial_map if spatial_map.ndim == 2 else spatial_map[:, :, spatial_map.shape[2] // 2]
    lo, hi = float(plane.min()), float(plane.max())
    scaled = np.zeros_like(plane) if hi == lo else (plane - lo) / (hi - lo)
    pixels = (scaled * 255.0).round().astype(np.uint8)
    header = f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + pixels.tobytes(order="C"))


def cmd_activations(cfg: RunConfig, args: argparse.Namespace) -> int:
    net = load_model(_path_from(cfg, "model", args.model, "--model"))
    data = load_dataset(_path_from(cfg, "dataset", args.dataset, "--dataset"))
    out = Path(cfg.out_dir) / "activations"
    out.mkdir(parents=True, exist_ok=True)

    groups: list[tuple[str, list[ChannelImage]]]
    if args.group_by_label:
        groups = [
            (f"_class{label}", [data.images[i] for i in data.class_indices(label)])
            for label in (0, 1)
            if data.class_indices(label)
        ]
    else:
        groups = [("", list(data.images))]

    written = 0
    for suffix, images in groups:
        maps = activation_maps(net, images, args.layer)
        for f in range(maps.shape[0]):
            stem = f"layer{args.layer}_filter{f}{suffix}"
            _write_pgm(out / f"{stem}.pgm", maps[f])
            atomic_write_bytes(out / f"{stem}.bin", maps[f].astype("<f8").tobytes(order="C"))
            written += 1
        meta = {
            "layer": args.layer,
            "filters": int(maps.shape[0]),
            "map_shape": list(maps.shape[1:]),
            "images": len(images),
        }
        atomic_write_text(out / f"layer{args.layer}{suffix}.json", json.dumps(meta, indent=2) + "\n")
    print(f"wrote {written} filter maps to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roisaliency",
        description="Train a CNN on registered images and rank atlas ROIs by corruption saliency.",
    )
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument("--threads", type=int, help="worker threads for per-ROI analysis")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", help="generate the synthetic striped dataset")

    p = sub.add_parser("preprocess", help="NIfTI -> downsampled sliding-window dataset")
    p.add_argument("--nifti", help="input .nii file")
    p.add_argument("--label", type=int, choices=(0, 1), required=True, help="class label")
    p.add_argument("--subject", help="subject id (default: file stem)")
    p.add_argument("--append", action="store_true", help="append to an existing dataset")

    p = sub.add_parser("train", help="train a classifier on a dataset manifest")
    p.add_argument("--train-manifest")
    p.add_argument("--val-manifest")
    p.add_argument("--resume", help="continue from a saved model")

    p = sub.add_parser("interpret", help="categorize ROI importance for a trained model")
    p.add_argument("--model")
    p.add_argument("--dataset")
    p.add_argument("--atlas")

    p = sub.add_parser("table1", help="sampling-bias benchmark on the synthetic data")
    p.add_argument("--sweep", action="store_true", help="also sweep alpha_jsd x alpha_w")

    p = sub.add_parser("activations", help="group-averaged conv filter maps")
    p.add_argument("--model")
    p.add_argument("--dataset")
    p.add_argument("--layer", type=int, required=True, help="index of a conv layer")
    p.add_argument("--group-by-label", action="store_true")

    return parser


_COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "interpret": cmd_interpret,
    "table1": cmd_table1,
    "activations": cmd_activations,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(
            args.config,
            overrides={"seed": args.seed, "out_dir": args.out, "threads": args.threads},
        )
        return _COMMANDS[args.command](cfg, args)
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
