"""Command-line interface: prepare, train, predict, heatmap, simulate,
benchmark, model-info.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 internal
invariant violation. Machine output (JSON lines) goes to stdout, all
diagnostics to stderr. Timing fields in machine output are null unless
--timings is passed, so seeded runs stay byte-reproducible.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import re
import sys
import time
import traceback

import numpy as np

from . import data_ingest, grasp_decode, model, preprocess, simworld, training
from .errors import InvalidConfig, MissingCheckpoint, PixelGraspError
from .grasp_decode import CameraModel
from .labels import rasterize

HEIGHT_GRID = (0.35, 0.45, 0.55)

_CONFIG_SCHEMA = {
    "data": {"dims", "side", "depth_range", "augment"},
    "model": {"in_channels", "input_side", "base_width", "levels", "up_mode", "seed"},
    "train": {"epochs", "batch_size", "split_fraction", "seed", "lr",
              "beta1", "beta2", "eps", "weights"},
    "camera": {"fx", "fy", "cx", "cy", "extrinsic"},
    "sim": {"scenes", "seed", "height", "channels", "side", "dropout_base",
            "noise_sigma", "max_objects", "width_scale"},
}
_AUGMENT_KEYS = {"count", "max_rotation", "max_translation", "scale_jitter", "crop_jitter"}
_WEIGHT_KEYS = {"q", "cos", "sin", "w"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def validate_config(doc: dict) -> dict:
    """Reject unknown keys anywhere in the run config before any work."""
    if not isinstance(doc, dict):
        raise InvalidConfig("run config must be a JSON object")
    for section, body in doc.items():
        if section not in _CONFIG_SCHEMA:
            raise InvalidConfig(f"unknown config section {section!r}")
        if not isinstance(body, dict):
            raise InvalidConfig(f"section {section!r} must be an object")
        for key in body:
            if key not in _CONFIG_SCHEMA[section]:
                raise InvalidConfig(f"unknown key {section}.{key}")
        if section == "data" and "augment" in body:
            for key in body["augment"]:
                if key not in _AUGMENT_KEYS:
                    raise InvalidConfig(f"unknown key data.augment.{key}")
        if section == "train" and "weights" in body:
            for key in body["weights"]:
                if key not in _WEIGHT_KEYS:
                    raise InvalidConfig(f"unknown key train.weights.{key}")
    return doc


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as f:
        return validate_config(json.load(f))


def _pick(flag_value, cfg: dict, section: str, key: str, default):
    if flag_value is not None:
        return flag_value
    return cfg.get(section, {}).get(key, default)


def _emit(doc) -> None:
    print(json.dumps(doc, sort_keys=True))


def _info(msg) -> None:
    print(msg, file=sys.stderr)


# --------------------------------------------------------------------------
# prepare
# --------------------------------------------------------------------------

def _load_rgb_png(path, dims):
    try:
        from PIL import Image
    except ImportError:
        _info("Pillow unavailable; RGB plane zeroed")
        return np.zeros(dims + (3,), dtype=np.float32)
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float32)


def cmd_prepare(args) -> int:
    cfg = _load_config(args.config)
    dims = tuple(_pick(args.dims, cfg, "data", "dims", (480, 640)))
    height, width = int(dims[0]), int(dims[1])
    pcd_re = re.compile(r"^pcd(\d+)\.txt$")
    found = []
    for root, _, files in os.walk(args.cornell_dir):
        for name in sorted(files):
            m = pcd_re.match(name)
            if m:
                found.append((m.group(0)[:-4], os.path.join(root, name)))
    if not found:
        raise PixelGraspError(f"no pcd*.txt files under {args.cornell_dir}")
    os.makedirs(args.out, exist_ok=True)

    manifest = {"dims": [height, width], "samples": []}
    for sample_id, pcd_path in sorted(found):
        with open(pcd_path, "rb") as f:
            points, _ = data_ingest.parse_pcd(f.read())
        depth, valid = data_ingest.project_to_depth(points, height, width)

        def parse_rect_file(path):
            if not os.path.exists(path):
                return [], 0
            with open(path, "r", encoding="ascii", errors="replace") as f:
                return data_ingest.parse_rectangles(f.read())

        base = pcd_path[:-4]
        pos, dropped_p = parse_rect_file(base + "cpos.txt")
        neg, dropped_n = parse_rect_file(base + "cneg.txt")
        for rect in pos + neg:
            rect.corners[:, 0] = np.clip(rect.corners[:, 0], 0.0, width - 1e-6)
            rect.corners[:, 1] = np.clip(rect.corners[:, 1], 0.0, height - 1e-6)
        rgb_path = base + "r.png"
        rgb = _load_rgb_png(rgb_path, (height, width)) if os.path.exists(rgb_path) \
            else np.zeros((height, width, 3), dtype=np.float32)

        out = args.out
        data_ingest.write_tensor_file(os.path.join(out, f"{sample_id}_rgb.ugt"),
                                      rgb.transpose(2, 0, 1))
        data_ingest.write_tensor_file(os.path.join(out, f"{sample_id}_depth.ugt"), depth)
        data_ingest.write_tensor_file(os.path.join(out, f"{sample_id}_dmask.ugt"),
                                      valid.astype(np.float32))
        for rects, tag in ((pos, "pos"), (neg, "neg")):
            if rects:
                stack = np.stack([r.corners for r in rects]).astype(np.float32)
                data_ingest.write_tensor_file(os.path.join(out, f"{sample_id}_{tag}.ugt"), stack)
        entry = {"id": sample_id, "pos_rects": len(pos), "neg_rects": len(neg),
                 "dropped_nan_groups": dropped_p + dropped_n}
        manifest["samples"].append(entry)
        _emit(entry)
    with open(os.path.join(args.out, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, sort_keys=True, indent=1)
    _info(f"prepared {len(manifest['samples'])} samples into {args.out}")
    return 0


def load_prepared_sample(data_dir: str, sample_id: str) -> data_ingest.RgbdSample:
    def tensor(tag):
        return data_ingest.read_tensor_file(os.path.join(data_dir, f"{sample_id}_{tag}.ugt"))

    rgb = tensor("rgb").transpose(1, 2, 0)
    depth = tensor("depth")
    valid = tensor("dmask") > 0.5

    def rects(tag):
        path = os.path.join(data_dir, f"{sample_id}_{tag}.ugt")
        if not os.path.exists(path):
            return []
        stack = data_ingest.read_tensor_file(path)
        return [data_ingest.GraspRectangle(c) for c in stack]

    return data_ingest.RgbdSample(rgb=rgb, depth=depth, depth_valid=valid,
                                  pos_rects=rects("pos"), neg_rects=rects("neg"))


# --------------------------------------------------------------------------
# train
# --------------------------------------------------------------------------

def _build_train_dataset(data_dir, cfg, model_cfg: model.ModelConfig):
    with open(os.path.join(data_dir, "manifest.json"), "r", encoding="utf-8") as f:
        manifest = json.load(f)
    side = int(cfg.get("data", {}).get("side", model_cfg.input_side))
    depth_range = cfg.get("data", {}).get("depth_range", [20.0, 120.0])
    rng = preprocess.NormalizationRange(float(depth_range[0]), float(depth_range[1]))
    aug = cfg.get("data", {}).get("augment", {})
    n_aug = int(aug.get("count", 0))
    channels = simworld.channels_for(model_cfg.in_channels)

    dataset = []
    for si, entry in enumerate(manifest["samples"]):
        sample = load_prepared_sample(data_dir, entry["id"])
        # inpaint at native resolution before any geometric transform
        if not sample.depth_valid.all():
            sample.depth = preprocess.inpaint_depth(sample.depth, ~sample.depth_valid)
            sample.depth_valid = np.ones_like(sample.depth_valid)
        base = preprocess.center_crop_resize(sample, side)
        variants = [base]
        for j in range(n_aug):
            params = preprocess.sample_augment_params(
                cfg.get("train", {}).get("seed", 0), si * 1000 + j,
                max_rotation=float(aug.get("max_rotation", math.pi)),
                max_translation=float(aug.get("max_translation", 0.0)),
                scale_jitter=float(aug.get("scale_jitter", 0.0)),
                crop_jitter=float(aug.get("crop_jitter", 0.0)))
            variants.append(preprocess.augment(base, params))
        for v in variants:
            planes, _ = simworld.assemble_input(v, channels, rng)
            labels = rasterize(v.pos_rects, side, side)
            dataset.append((planes, labels.stack()))
    return dataset


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    model_cfg = model.ModelConfig(**cfg.get("model", {}))
    tr = cfg.get("train", {})
    weights = training.LossWeights(**tr.get("weights", {}))
    train_cfg = training.TrainConfig(
        epochs=_pick(args.epochs, cfg, "train", "epochs", 10),
        batch_size=int(tr.get("batch_size", 4)),
        split_fraction=float(tr.get("split_fraction", 0.8)),
        seed=_pick(args.seed, cfg, "train", "seed", 0),
        lr=float(tr.get("lr", 1e-3)),
        beta1=float(tr.get("beta1", 0.9)),
        beta2=float(tr.get("beta2", 0.999)),
        eps=float(tr.get("eps", 1e-8)),
        weights=weights,
    )
    dataset = _build_train_dataset(args.data, cfg, model_cfg)
    _info(f"training on {len(dataset)} samples, {train_cfg.epochs} epochs")
    net = model.build(model_cfg)

    def progress(rec: training.EpochRecord):
        _emit({"epoch": rec.epoch, "train_loss": rec.train_loss,
               "val_loss": rec.val_loss,
               "seconds": rec.seconds if args.timings else None})

    training.train(dataset, net, train_cfg, progress=progress)
    model.save_file(args.out, net)
    _info(f"checkpoint written to {args.out}")
    return 0


# --------------------------------------------------------------------------
# predict / heatmap
# --------------------------------------------------------------------------

def _require_file(path):
    if not os.path.exists(path):
        raise MissingCheckpoint(f"no such file: {path}")
    return path


def _write_heatmaps(maps, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    ranges = {"q": (0.0, 1.0), "cos2phi": (-1.0, 1.0),
              "sin2phi": (-1.0, 1.0), "w": (0.0, 1.0)}
    for name, (lo, hi) in ranges.items():
        plane = getattr(maps, name)
        with open(os.path.join(out_dir, f"{name}.ppm"), "wb") as f:
            f.write(grasp_decode.heatmap_render(plane, lo, hi))


def cmd_predict(args) -> int:
    cfg = _load_config(args.config)
    net = model.load_file(_require_file(args.ckpt))
    planes = data_ingest.read_tensor_file(_require_file(args.input))
    if planes.ndim != 3 or planes.shape[0] != net.config.in_channels:
        raise PixelGraspError(
            f"input {planes.shape} incompatible with {net.config.in_channels}-channel model")
    cam_doc = cfg.get("camera", {})
    if args.camera:
        with open(_require_file(args.camera), "r", encoding="utf-8") as f:
            cam_doc = json.load(f)
    cam = CameraModel.from_json_dict(cam_doc)
    if args.depth:
        depth = data_ingest.read_tensor_file(_require_file(args.depth))
    else:
        # fall back to the last input channel as the metric depth plane
        depth = planes[-1]

    t0 = time.perf_counter()
    maps = net.predict(planes)
    pose = grasp_decode.decode_pose(maps, depth, cam, smooth=args.smooth)
    planning = time.perf_counter() - t0

    doc = pose.to_dict()
    doc["planning_seconds"] = planning
    _emit(doc)
    if args.heatmaps:
        _write_heatmaps(maps, args.heatmaps)
    return 0


def cmd_heatmap(args) -> int:
    planes = data_ingest.read_tensor_file(_require_file(args.input))
    os.makedirs(args.out, exist_ok=True)
    if planes.ndim == 3 and planes.shape[0] == 4:
        from .labels import GraspMaps
        _write_heatmaps(GraspMaps.from_stack(planes), args.out)
    elif planes.ndim == 2:
        with open(os.path.join(args.out, "heatmap.ppm"), "wb") as f:
            f.write(grasp_decode.heatmap_render(planes, args.lo, args.hi))
    else:
        raise PixelGraspError(f"expected a (H, W) or (4, H, W) tensor, got {planes.shape}")
    return 0


# --------------------------------------------------------------------------
# simulate / benchmark
# --------------------------------------------------------------------------

def _make_predictor(ckpt: str, channels: str | None):
    if ckpt == "stub":
        return simworld.GroundTruthPredictor(channels or "rgbd"), 0
    path = _require_file(ckpt)
    net = model.load_file(path)
    predictor = simworld.NetPredictor(net)
    if channels and channels != predictor.channels:
        raise PixelGraspError(
            f"--channels {channels} conflicts with the {predictor.channels} checkpoint")
    return predictor, os.path.getsize(path)


def _trial_doc(seed, trial, timings):
    return {
        "scene_seed": seed,
        "success": trial.success,
        "failure_reason": trial.failure_reason,
        "quality": trial.quality,
        "grasp": trial.grasp.to_dict(),
        "planning_seconds": trial.planning_seconds if timings else None,
    }


def _run_eval(predictor, args_ns, scene_seeds, height):
    params = simworld.SceneParams(max_objects=args_ns.max_objects)
    ctrl = simworld.ControllerConfig(channels=predictor.channels,
                                     width_scale=args_ns.width_scale)
    report, trials = simworld.evaluate_scenes(
        predictor, scene_seeds, params, height, side=args_ns.side,
        dropout_base=args_ns.dropout_base, noise_sigma=args_ns.noise_sigma, ctrl=ctrl)
    return report, trials


def _sim_defaults(args, cfg):
    args.scenes = _pick(args.scenes, cfg, "sim", "scenes", 20)
    args.seed = _pick(args.seed, cfg, "sim", "seed", 0)
    args.side = _pick(args.side, cfg, "sim", "side", 96)
    args.dropout_base = _pick(args.dropout_base, cfg, "sim", "dropout_base", 0.0)
    args.noise_sigma = _pick(args.noise_sigma, cfg, "sim", "noise_sigma", 0.0)
    args.max_objects = _pick(args.max_objects, cfg, "sim", "max_objects", 1)
    args.width_scale = _pick(args.width_scale, cfg, "sim", "width_scale", 1.2)
    return args


def _scene_seed_list(seed, count):
    return [int(seed) * 100_003 + i for i in range(int(count))]


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    args = _sim_defaults(args, cfg)
    height = _pick(args.height, cfg, "sim", "height", 0.35)
    channels = _pick(args.channels, cfg, "sim", "channels", None)
    predictor, _ = _make_predictor(args.ckpt, channels)
    seeds = _scene_seed_list(args.seed, args.scenes)
    report, trials = _run_eval(predictor, args, seeds, height)
    doc = {
        "config": {"scenes": args.scenes, "seed": args.seed, "height": height,
                   "channels": predictor.channels, "side": args.side,
                   "dropout_base": args.dropout_base, "noise_sigma": args.noise_sigma},
        "metrics": report.to_dict(include_timing=args.timings),
        "trials": [_trial_doc(s, t, args.timings) for s, t in zip(seeds, trials)],
    }
    if args.report:
        with open(args.report, "w", encoding="utf-8") as f:
            json.dump(doc, f, sort_keys=True, indent=1)
    _emit(doc["metrics"])
    return 0


def cmd_benchmark(args) -> int:
    cfg = _load_config(args.config)
    args = _sim_defaults(args, cfg)
    depth_pred, depth_bytes = _make_predictor(args.ckpt_depth, "d")
    rgbd_pred, rgbd_bytes = _make_predictor(args.ckpt_rgbd, None if args.ckpt_rgbd != "stub" else "rgbd")
    seeds = _scene_seed_list(args.seed, args.scenes)

    rows = []
    for height in HEIGHT_GRID:
        row = {"height": height}
        for tag, pred in (("depth", depth_pred), ("rgbd", rgbd_pred)):
            report, _ = _run_eval(pred, args, seeds, height)
            row[tag] = report.to_dict(include_timing=args.timings)
        rows.append(row)
    doc = {
        "rows": rows,
        "model_size_bytes": {"depth": depth_bytes, "rgbd": rgbd_bytes},
        "config": {"scenes": args.scenes, "seed": args.seed, "side": args.side,
                   "dropout_base": args.dropout_base, "noise_sigma": args.noise_sigma},
    }
    if args.report:
        with open(args.report, "w", encoding="utf-8") as f:
            json.dump(doc, f, sort_keys=True, indent=1)

    header = f"{'height':>8} {'d succ':>8} {'d robust':>9} {'rgbd succ':>10} {'rgbd robust':>12}"
    _info(header)
    for row in rows:
        _info(f"{row['height']:>8.2f} {row['depth']['success_rate']:>8.3f} "
              f"{row['depth']['robust_grasp_rate']:>9.3f} "
              f"{row['rgbd']['success_rate']:>10.3f} "
              f"{row['rgbd']['robust_grasp_rate']:>12.3f}")
    _info(f"model bytes: depth={depth_bytes} rgbd={rgbd_bytes}")
    _emit(doc)
    return 0


def cmd_model_info(args) -> int:
    path = args.ckpt
    if not os.path.exists(path):
        print(f"error: checkpoint not found: {path}", file=sys.stderr)
        return 2
    net = model.load_file(path)
    from dataclasses import asdict
    _emit({"config": asdict(net.config),
           "param_count": model.param_count(net.config),
           "bytes": os.path.getsize(path)})
    return 0


# --------------------------------------------------------------------------
# Dispatch
# --------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="pixelgrasp",
                     description="Pixel-wise grasp prediction pipeline")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("prepare", help="convert a Cornell-style directory to tensor files")
    p.add_argument("--cornell-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dims", nargs=2, type=int, default=None, metavar=("H", "W"))
    p.add_argument("--config", default=None)

    p = sub.add_parser("train", help="train a model on a prepared directory")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--timings", action="store_true")

    p = sub.add_parser("predict", help="run one inference and print the grasp pose")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--depth", default=None)
    p.add_argument("--camera", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--heatmaps", default=None)
    p.add_argument("--smooth", action="store_true")

    p = sub.add_parser("heatmap", help="render tensor planes as PPM heatmaps")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lo", type=float, default=0.0)
    p.add_argument("--hi", type=float, default=1.0)

    for name in ("simulate", "benchmark"):
        p = sub.add_parser(name, help=f"{name} against the synthetic oracle")
        if name == "simulate":
            p.add_argument("--ckpt", required=True)
            p.add_argument("--height", type=float, default=None, choices=None)
            p.add_argument("--channels", choices=("rgbd", "greyd", "d"), default=None)
        else:
            p.add_argument("--ckpt-depth", required=True)
            p.add_argument("--ckpt-rgbd", required=True)
        p.add_argument("--scenes", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--side", type=int, default=None)
        p.add_argument("--dropout-base", type=float, default=None)
        p.add_argument("--noise-sigma", type=float, default=None)
        p.add_argument("--max-objects", type=int, default=None)
        p.add_argument("--width-scale", type=float, default=None)
        p.add_argument("--report", default=None)
        p.add_argument("--config", default=None)
        p.add_argument("--timings", action="store_true")

    p = sub.add_parser("model-info", help="print checkpoint config and size")
    p.add_argument("ckpt")
    return parser


_COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "predict": cmd_predict,
    "heatmap": cmd_heatmap,
    "simulate": cmd_simulate,
    "benchmark": cmd_benchmark,
    "model-info": cmd_model_info,
}


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return 2
    except PixelGraspError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 3


def main() -> None:
    raise SystemExit(dispatch())


if __name__ == "__main__":
    main()
