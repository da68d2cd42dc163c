"""``splatvid`` command line: fit, render, interpolate, resample, eval, inspect."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from .camera import CameraDivergence, Intrinsics, resample_intrinsics
from .config import ConfigError, RunConfig
from .io import CheckpointError, CheckpointMeta, frame_times, load_checkpoint, load_frames, save_checkpoint, \
    write_frame, write_gsvf
from .metrics import evaluate
from .renderer import render_frame
from .trainer import TrainingDiverged, fit

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3
TRAJECTORY_SAMPLES = 10


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers


def parse_override(text: str) -> tuple[str, object]:
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise UsageError(f"--set expects KEY=VALUE, got {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def build_config(args) -> RunConfig:
    data = RunConfig.load(args.config).to_dict() if args.config else RunConfig().to_dict()
    for item in args.set or []:
        key, value = parse_override(item)
        data[key] = value
    if args.seed is not None:
        data["seed"] = args.seed
    return RunConfig.from_dict(data)


def checkpoint_meta(cfg: RunConfig, result, frames) -> CheckpointMeta:
    k, h, w, _ = frames.shape
    return CheckpointMeta(w, h, k, cfg.fps, cfg.seed, result.schedule.fingerprint_dict())


def check_times(times) -> list[float]:
    out = [float(t) for t in times]
    bad = [t for t in out if not 0.0 <= t <= 1.0]
    if bad:
        raise UsageError(f"times must lie in [0, 1], got {bad}")
    return out


def upsampled_times(num_frames: int, factor: int) -> np.ndarray:
    """Times for ``factor``x temporal upsampling: (K - 1) * factor + 1 samples."""
    if factor < 1:
        raise UsageError(f"upsampling factor must be >= 1, got {factor}")
    return np.linspace(0.0, 1.0, (num_frames - 1) * factor + 1)


def render_times(scene, camera, times, k: Intrinsics, tile_size: int = 16) -> np.ndarray:
    return np.stack([render_frame(scene, camera, t, k=k, tile_size=tile_size).image for t in times])


def write_images(images: np.ndarray, out_dir, fmt: str) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if fmt == "gsvf":
        path = out_dir / "frames.gsvf"
        write_gsvf(images, path)
        return [path]
    paths = []
    for i, img in enumerate(images):
        path = out_dir / f"frame_{i:04d}.{fmt}"
        write_frame(np.clip(img, 0.0, 1.0), path)
        paths.append(path)
    return paths


def _emit(obj, path=None) -> None:
    text = json.dumps(obj, indent=2)
    if path:
        Path(path).write_text(text + "\n")
    print(text)


# ---------------------------------------------------------------- commands


def cmd_fit(args) -> int:
    cfg = build_config(args)
    if args.ci and args.seed is None:
        raise UsageError("--seed is required with --ci")
    _, frames = load_frames(args.input, fps=cfg.fps)
    out = Path(args.out)
    log_path = Path(args.log) if args.log else out.with_name(out.name + ".metrics.jsonl")
    torch.manual_seed(cfg.seed)
    try:
        result = fit(frames, cfg, ci=args.ci)
    except TrainingDiverged as e:
        if e.last_good is not None:
            good = out.with_name(out.name + ".last_good")
            save_checkpoint(e.last_good.scene, e.last_good.camera, checkpoint_meta(cfg, e.last_good, frames), good)
            write_log(e.last_good.log, log_path)
            print(f"error: {e}; last good state written to {good}", file=sys.stderr)
        else:
            print(f"error: {e}; no good state was recorded", file=sys.stderr)
        return EXIT_DIVERGED
    save_checkpoint(result.scene, result.camera, checkpoint_meta(cfg, result, frames), out)
    write_log(result.log, log_path)
    final = result.log[-1]
    print(f"wrote {out} ({final['num_gaussians']} Gaussians, step {final['step']}, "
          f"probe PSNR {final['psnr']:.2f} dB); log {log_path}")
    return EXIT_OK


def write_log(log: list[dict], path) -> None:
    with open(path, "w") as f:
        for rec in log:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def _load(path):
    scene, camera, meta, _ = load_checkpoint(path)
    return scene, camera, meta


def cmd_render(args) -> int:
    scene, camera, meta = _load(args.checkpoint)
    if args.times:
        times = check_times(args.times)
    else:
        times = list(frame_times(args.count or meta.num_frames))
    images = render_times(scene, camera, times, camera.intrinsics(0))
    paths = write_images(images, args.out_dir, args.format)
    print(f"rendered {len(times)} frame(s) to {args.out_dir}" + ("" if len(paths) > 1 else f" ({paths[0].name})"))
    return EXIT_OK


def cmd_interpolate(args) -> int:
    scene, camera, meta = _load(args.checkpoint)
    times = upsampled_times(meta.num_frames, args.factor)
    images = render_times(scene, camera, times, camera.intrinsics(0))
    write_images(images, args.out_dir, args.format)
    print(f"interpolated {meta.num_frames} -> {len(times)} frames into {args.out_dir}")
    return EXIT_OK


def cmd_resample(args) -> int:
    scene, camera, meta = _load(args.checkpoint)
    times = check_times(args.times) if args.times else list(frame_times(meta.num_frames))
    k = resample_intrinsics(camera.intrinsics(0), args.scale_x, args.scale_y)
    images = render_times(scene, camera, times, k)
    write_images(images, args.out_dir, args.format)
    print(f"rendered {len(times)} frame(s) at {k.width}x{k.height} to {args.out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    scene, camera, meta = _load(args.checkpoint)
    _, frames = load_frames(args.input)
    k = camera.intrinsics(0)
    if frames.shape[1:3] != (k.height, k.width):
        raise UsageError(f"input frames are {frames.shape[2]}x{frames.shape[1]}, checkpoint renders "
                         f"{k.width}x{k.height}")
    renders = render_times(scene, camera, frame_times(len(frames)), k)
    report = evaluate(renders, frames)
    _emit(report.to_dict(), args.json)
    return EXIT_OK


def opacity_histogram(opacity: np.ndarray) -> dict[str, int]:
    """Counts per nearest tenth, keyed "0.0" .. "1.0"."""
    bins = np.clip(np.floor(np.asarray(opacity, dtype=np.float64) * 10 + 0.5).astype(int), 0, 10)
    counts = np.bincount(bins, minlength=11)
    return {f"{i / 10:.1f}": int(c) for i, c in enumerate(counts)}


def inspect_summary(scene, camera, meta) -> dict:
    with torch.no_grad():
        opacity = scene.opacity().double().numpy()
        cp = scene.control_points.double().numpy()
        times = np.linspace(0.0, 1.0, TRAJECTORY_SAMPLES)
        states = [s.double().numpy() for s in camera.states(list(times))]
        k = camera.intrinsics(0)
    steps = np.linalg.norm(np.diff(cp, axis=1), axis=-1) if cp.shape[1] > 1 else np.zeros((len(cp), 0))
    polygon = steps.sum(axis=1)
    spline = {
        "position_model": scene.position_model,
        "control_points": int(cp.shape[1]),
        "degree": int(scene.knot_vector.degree) if scene.position_model == "spline" else None,
        "knots": [float(x) for x in scene.knot_vector.knots] if scene.position_model == "spline" else [],
        "control_polygon_length": {"mean": float(polygon.mean()), "max": float(polygon.max()),
                                   "static_fraction": float(np.mean(polygon == 0))},
    }
    return {
        "num_gaussians": len(scene),
        "sh_degree": scene.sh_degree,
        "video": {"width": meta.width, "height": meta.height, "frames": meta.num_frames, "fps": meta.fps,
                  "seed": meta.seed},
        "opacity": {"mean": float(opacity.mean()), "below_0.5": float(np.mean(opacity < 0.5)),
                    "histogram": opacity_histogram(opacity)},
        "spline": spline,
        "camera": {
            "mode": camera.mode,
            "intrinsics": {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy},
            "trajectory": [{"t": float(t), "q": [float(v) for v in s[:4]], "translation": [float(v) for v in s[4:]]}
                           for t, s in zip(times, states)],
        },
    }


def cmd_inspect(args) -> int:
    scene, camera, meta = _load(args.checkpoint)
    _emit(inspect_summary(scene, camera, meta), args.json)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _image_format(p):
    p.add_argument("--format", choices=("png", "gsvf"), default="png",
                   help="8-bit PNG per frame, or one raw float GSVF file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splatvid", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a video and write a checkpoint")
    p.add_argument("input", help="directory of frames or a .gsvf file")
    p.add_argument("--out", "-o", required=True, help="checkpoint path")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config value (JSON value)")
    p.add_argument("--seed", type=int)
    p.add_argument("--ci", action="store_true", help="reproducible mode: --seed required, no wall-clock in logs")
    p.add_argument("--log", help="metrics log path (JSON lines; default CHECKPOINT.metrics.jsonl)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("render", help="render frames at given times")
    p.add_argument("checkpoint")
    p.add_argument("--times", type=float, nargs="+", help="normalized times in [0, 1]")
    p.add_argument("--count", type=int, help="evenly spaced frames (default: the fitted frame count)")
    p.add_argument("--out-dir", required=True)
    _image_format(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("interpolate", help="temporal upsampling by an integer factor")
    p.add_argument("checkpoint")
    p.add_argument("--factor", type=int, default=2)
    p.add_argument("--out-dir", required=True)
    _image_format(p)
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("resample", help="render at a scaled resolution")
    p.add_argument("checkpoint")
    p.add_argument("--scale-x", type=float, required=True)
    p.add_argument("--scale-y", type=float, required=True)
    p.add_argument("--times", type=float, nargs="+")
    p.add_argument("--out-dir", required=True)
    _image_format(p)
    p.set_defaults(func=cmd_resample)

    p = sub.add_parser("eval", help="PSNR/SSIM of the fitted frames against ground truth")
    p.add_argument("checkpoint")
    p.add_argument("input", help="directory of frames or a .gsvf file")
    p.add_argument("--json", help="also write the report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="summarize a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--json", help="also write the summary here")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, OSError, ValueError, CameraDivergence) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
