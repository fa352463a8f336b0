"""Experiment driver.

Subcommands: gen, degrade, train, render, eval, fuse, mesh. Every command
reads one declarative JSON config (optionally layered on a preset) and is
deterministic for a fixed seed. Exit codes: 0 success, 2 config error,
3 data error, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from semfield import dataset as ds_mod
from semfield import fusion as fusion_mod
from semfield import labelops
from semfield.config import (ExperimentConfig, load_config, rng_for,
                             save_config)
from semfield.dataset import VOID, read_pfm, write_pfm
from semfield.errors import ConfigError, DataError, TrainingDiverged
from semfield.field import load_checkpoint
from semfield.geometry import Camera
from semfield.meshing import extract_semantic_mesh, save_ply
from semfield.render import RenderConfig, render_image
from semfield.synthgen import generate_scene, make_trajectory, render_sequence
from semfield.train import TrainConfig, train


def _prepare_out(path, overwrite: bool) -> Path:
    path = Path(path)
    if path.exists() and any(path.iterdir()) and not overwrite:
        raise DataError(f"output {path} exists and is not empty (use --overwrite)")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _seed_for(cfg: ExperimentConfig, label: str) -> int:
    import zlib
    return zlib.crc32(f"{cfg.seed}:{label}".encode())


def _render_config(cfg: ExperimentConfig, deterministic: bool) -> RenderConfig:
    t = cfg.train
    return RenderConfig(k_coarse=t.k_coarse, m_fine=t.m_fine, t_near=t.t_near,
                        t_far=t.t_far, jitter=not deterministic)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen(cfg: ExperimentConfig, args) -> None:
    out = _prepare_out(args.out, args.overwrite)
    scene = generate_scene(cfg.scene, _seed_for(cfg, "scene"))
    camera = Camera.from_hfov(cfg.camera.width, cfg.camera.height,
                              cfg.camera.hfov_deg)
    traj = make_trajectory(cfg.trajectory, _seed_for(cfg, "trajectory"),
                           centre=scene.centre)
    dataset = render_sequence(scene, camera, traj, t_far=cfg.gt_t_far,
                              num_classes=cfg.scene.num_classes)
    dataset.save(out, overwrite=True)
    save_config(cfg, out / "config.json")


def _degraded_labels(cfg: ExperimentConfig, dataset, train_idx):
    """Apply the configured degradation to the training frames' label maps."""
    spec = cfg.degrade
    labels = np.stack([dataset.frames[i].label for i in train_idx])
    rng = rng_for(cfg.seed, "degrade")
    if spec.kind == "none":
        return labels
    if spec.kind == "sparsity":
        mask = ds_mod.select_keyframes(train_idx, spec.sparsity_ratio,
                                       explicit=spec.keyframes)
        out = labels.copy()
        for k, idx in enumerate(train_idx):
            if not mask.is_labelled(idx):
                out[k] = VOID
        return out
    if spec.kind == "pixel_noise":
        return labelops.corrupt_pixels(labels, spec.noise_ratio,
                                       dataset.num_classes, rng)
    if spec.kind == "region_noise":
        instances = np.stack([dataset.frames[i].instance for i in train_idx])
        target = spec.target_class
        if target is None:
            target = fusion_mod._class_with_most_instances(labels, instances)
            if target is None:
                raise ConfigError("no class with >= 2 instances for region noise")
        return labelops.corrupt_regions(labels, instances, target,
                                        spec.region_ratio, spec.region_criterion,
                                        rng, dataset.num_classes)
    if spec.kind == "downscale":
        return labelops.downscale_labels(labels, spec.scale, spec.downscale_mode)
    if spec.kind == "partial":
        return labelops.partial_labels(labels, spec.budget, rng)
    if spec.kind == "fusion_sim":
        probs = fusion_mod.simulate_cnn_probs(dataset, train_idx, cfg.fusion,
                                              rng_for(cfg.seed, "fusion_sim"))
        return np.stack([probs[i].argmax(axis=-1).astype(np.uint8)
                         for i in train_idx])
    raise ConfigError(f"unknown degradation {spec.kind!r}")


def cmd_degrade(cfg: ExperimentConfig, args) -> None:
    dataset = ds_mod.load(args.data)
    out = _prepare_out(args.out, args.overwrite)
    train_idx, _ = ds_mod.split(len(dataset), cfg.split_stride)
    degraded = _degraded_labels(cfg, dataset, train_idx)
    for k, idx in enumerate(train_idx):
        dataset.frames[idx].label = degraded[k]
    dataset.save(out, overwrite=True)
    save_config(cfg, out / "config.json")


def cmd_train(cfg: ExperimentConfig, args) -> None:
    dataset = ds_mod.load(args.data)
    out = _prepare_out(args.out, args.overwrite)
    train_idx, _ = ds_mod.split(len(dataset), cfg.split_stride)
    if cfg.degrade.kind == "sparsity":
        mask = ds_mod.select_keyframes(train_idx, cfg.degrade.sparsity_ratio,
                                       explicit=cfg.degrade.keyframes)
    else:
        mask = ds_mod.select_keyframes(train_idx, 0.0)
    tcfg = cfg.train
    if args.deterministic:
        tcfg = TrainConfig(**{**tcfg.__dict__, "jitter": False})
    field_config = cfg.field_spec.to_field_config(dataset.num_classes)
    train(dataset, mask, tcfg, field_config=field_config, out_dir=out,
          progress=(lambda it, loss: print(f"iter {it}: loss {loss:.4f}",
                                           flush=True)) if args.verbose else None)
    save_config(cfg, out / "config.json")


_POSE_SETS = ("train", "test", "all")


def _pose_indices(cfg, dataset, which: str):
    train_idx, test_idx = ds_mod.split(len(dataset), cfg.split_stride)
    if which == "train":
        return train_idx
    if which == "test":
        return test_idx
    if which == "all":
        return list(range(len(dataset)))
    raise ConfigError(f"poses must be one of {_POSE_SETS}")


def cmd_render(cfg: ExperimentConfig, args) -> None:
    dataset = ds_mod.load(args.data)
    params, _, _ = load_checkpoint(args.ckpt)
    if params.config.num_classes != dataset.num_classes:
        raise DataError("checkpoint and dataset class counts differ")
    out = _prepare_out(args.out, args.overwrite)
    indices = _pose_indices(cfg, dataset, args.poses)
    rcfg = _render_config(cfg, args.deterministic)
    rng = None if args.deterministic else rng_for(cfg.seed, "render")
    for idx in indices:
        img = render_image(params, dataset.camera, dataset.frames[idx].pose,
                           rcfg, rng)
        rgb8 = np.clip(np.round(img["rgb"] * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(rgb8).save(out / f"rgb_{idx:04d}.png")
        Image.fromarray(img["label"], mode="L").save(out / f"label_{idx:04d}.png")
        write_pfm(out / f"depth_{idx:04d}.pfm", img["depth"])
        write_pfm(out / f"entropy_{idx:04d}.pfm", img["entropy"])
    with open(out / "index.json", "w") as f:
        json.dump({"indices": indices, "poses": args.poses}, f)


def _load_predictions(pred_dir: Path):
    """Accept either a render-output directory or a dataset directory."""
    pred_dir = Path(pred_dir)
    if (pred_dir / "index.json").exists():
        with open(pred_dir / "index.json") as f:
            indices = json.load(f)["indices"]
        out = {}
        for idx in indices:
            entry = {
                "label": np.asarray(Image.open(pred_dir / f"label_{idx:04d}.png"),
                                    dtype=np.uint8),
                "rgb": np.asarray(Image.open(pred_dir / f"rgb_{idx:04d}.png"),
                                  dtype=np.float32) / 255.0,
            }
            depth_p = pred_dir / f"depth_{idx:04d}.pfm"
            entry["depth"] = read_pfm(depth_p) if depth_p.exists() else None
            out[idx] = entry
        return out
    if (pred_dir / "frames.json").exists():
        d = ds_mod.load(pred_dir)
        return {i: {"label": fr.label, "rgb": fr.rgb, "depth": fr.depth}
                for i, fr in enumerate(d.frames)}
    raise DataError(f"{pred_dir}: neither a render output nor a dataset")


def cmd_eval(cfg: ExperimentConfig, args) -> None:
    dataset = ds_mod.load(args.data)
    preds = _load_predictions(args.pred)
    missing = [i for i in preds if i >= len(dataset)]
    if missing:
        raise DataError(f"prediction indices {missing} outside dataset")
    indices = sorted(preds)
    gt_labels = np.stack([dataset.frames[i].label for i in indices])
    pr_labels = np.stack([preds[i]["label"] for i in indices])
    report = labelops.segmentation_metrics(pr_labels, gt_labels,
                                           dataset.num_classes)
    report.psnr = float(np.mean([
        labelops.psnr(preds[i]["rgb"], dataset.frames[i].rgb) for i in indices]))
    have_depth = all(preds[i]["depth"] is not None for i in indices) \
        and all(dataset.frames[i].depth is not None for i in indices)
    if have_depth:
        report.depth = labelops.depth_metrics(
            np.stack([preds[i]["depth"] for i in indices]),
            np.stack([dataset.frames[i].depth for i in indices]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.json", "w") as f:
        json.dump(report.as_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    with open(out / "metrics.csv", "w", newline="") as f:
        writer = csv.writer(f)
        d = report.as_dict()
        writer.writerow(list(d))
        writer.writerow([f"{v:.6f}" for v in d.values()])
    print(json.dumps(report.as_dict(), indent=2, sort_keys=True))


def cmd_fuse(cfg: ExperimentConfig, args) -> None:
    dataset = ds_mod.load(args.data)
    params, _, _ = load_checkpoint(args.ckpt)
    out = _prepare_out(args.out, args.overwrite)
    train_idx, _ = ds_mod.split(len(dataset), cfg.split_stride)
    probs = fusion_mod.simulate_cnn_probs(dataset, train_idx, cfg.fusion,
                                          rng_for(cfg.seed, "fusion_sim"))
    rcfg = _render_config(cfg, args.deterministic)
    rng = None if args.deterministic else rng_for(cfg.seed, "render")
    renders = fusion_mod.nerf_fusion_render(params, dataset, train_idx, rcfg, rng)
    rows = fusion_mod.fusion_comparison(dataset, train_idx, probs, renders,
                                        tau_d=cfg.fusion_tau_d)
    with open(out / "fusion.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["method", "miou", "avg_acc", "total_acc"])
        for name, rep in rows.items():
            writer.writerow([name, f"{rep.miou:.6f}", f"{rep.avg_acc:.6f}",
                             f"{rep.total_acc:.6f}"])
    for name, rep in rows.items():
        print(f"{name}: mIoU {rep.miou:.4f}  avg_acc {rep.avg_acc:.4f}  "
              f"total_acc {rep.total_acc:.4f}")


def cmd_mesh(cfg: ExperimentConfig, args) -> None:
    params, _, _ = load_checkpoint(args.ckpt)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.exists() and not args.overwrite:
        raise DataError(f"{out} exists (use --overwrite)")
    mesh = extract_semantic_mesh(params, cfg.scene.bounds_lo, cfg.scene.bounds_hi,
                                 resolution=cfg.mesh.resolution, iso=cfg.mesh.iso)
    save_ply(out, mesh, params.config.num_classes)
    print(f"wrote {len(mesh.vertices)} vertices, {len(mesh.faces)} faces to {out}")


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_common(p, data=False, ckpt=False, pred=False, out=True):
    p.add_argument("--config", help="experiment config JSON (layered on preset)")
    p.add_argument("--preset", default="desk-scale",
                   help="base preset: desk-scale or paper-scale")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--deterministic", action="store_true",
                   help="bit-reproducible mode (midpoint sampling, no jitter)")
    p.add_argument("--overwrite", action="store_true",
                   help="allow writing into a non-empty output")
    p.add_argument("--verbose", action="store_true")
    if data:
        p.add_argument("--data", required=True, help="dataset directory")
    if ckpt:
        p.add_argument("--ckpt", required=True, help="checkpoint file")
    if pred:
        p.add_argument("--pred", required=True, help="predictions directory")
    if out:
        p.add_argument("--out", required=True, help="output path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semfield",
        description="semantic radiance field experiment driver")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    _add_common(p)
    p = sub.add_parser("degrade", help="write a label-degraded copy of a dataset")
    _add_common(p, data=True)
    p = sub.add_parser("train", help="train a field on a dataset")
    _add_common(p, data=True)
    p = sub.add_parser("render", help="render rgb/label/depth/entropy images")
    _add_common(p, data=True, ckpt=True)
    p.add_argument("--poses", default="test", choices=_POSE_SETS)
    p = sub.add_parser("eval", help="compare predictions against a dataset")
    _add_common(p, data=True, pred=True)
    p = sub.add_parser("fuse", help="multi-view fusion comparison table")
    _add_common(p, data=True, ckpt=True)
    p = sub.add_parser("mesh", help="extract a semantic mesh from a checkpoint")
    _add_common(p, ckpt=True)
    return parser


_COMMANDS = {"gen": cmd_gen, "degrade": cmd_degrade, "train": cmd_train,
             "render": cmd_render, "eval": cmd_eval, "fuse": cmd_fuse,
             "mesh": cmd_mesh}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.preset, args.seed)
        _COMMANDS[args.command](cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except TrainingDiverged as e:
        print(f"numeric divergence: {e}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
