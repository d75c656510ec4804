"""Command-line entry point: ``panodepth {render,warp,optimize,gradcheck,eval}``.

Exit codes: 0 success, 2 validation error, 3 I/O error, 4 numerical failure.
The default output directory comes from ``$PANODEPTH_OUT`` (else ``.``).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .errors import DivergenceError, InvalidInputError, NonFiniteError, PanoDepthError, UsageError
from .geometry import PixelGrid
from .gradcheck import ALL_CASES, injected_fault, run_case
from .losses import LossWeights
from .metrics import eval_protocol
from .optimize import FLOWS, OptimConfig, cropped_abs_rel, optimize_pair
from .scenes import TEXTURES, SceneSpec, export_dataset, forward_trajectory
from .warp import CameraMotion, coverage, synthesize_image

OUT_ENV = "PANODEPTH_OUT"

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

_WEIGHT_KEYS = {f.name for f in dataclasses.fields(LossWeights)}
_OPTIM_KEYS = {f.name for f in dataclasses.fields(OptimConfig)} - {"weights"}


def build_optim_config(overrides: dict) -> OptimConfig:
    """OptimConfig from a flat mapping; loss weights may be given by name.

    Unknown keys are rejected, and every value goes through the owning
    type's validation.
    """
    unknown = set(overrides) - _OPTIM_KEYS - _WEIGHT_KEYS
    if unknown:
        raise InvalidInputError(f"unknown config keys: {sorted(unknown)}")
    weights = LossWeights(**{k: float(v) for k, v in overrides.items() if k in _WEIGHT_KEYS})
    opts = {k: v for k, v in overrides.items() if k in _OPTIM_KEYS}
    if "betas" in opts:
        opts["betas"] = tuple(opts["betas"])
    try:
        return OptimConfig(weights=weights, **opts)
    except TypeError as exc:
        raise InvalidInputError(f"bad config value: {exc}") from exc


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV, "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _grid(h) -> PixelGrid:
    if h < 2 or h % 2:
        raise InvalidInputError(f"--h must be an even integer >= 2, got {h}")
    return PixelGrid(h)


def _load_motion(path, index):
    record = io.read_json(path)
    if isinstance(record, list):
        if not 0 <= index < len(record):
            raise InvalidInputError(f"motion index {index} outside 0..{len(record) - 1} in {path}")
        record = record[index]
    return CameraMotion.from_json(record)


def cmd_render(args):
    scene = SceneSpec(texture=args.texture, period=args.period, seed=args.seed)
    traj = forward_trajectory(scene, args.steps, args.step)
    for path in export_dataset(scene, traj, _grid(args.h), _out_dir(args)):
        print(path)
    return EXIT_OK


def cmd_warp(args):
    v = io.read_png(args.image)
    d = io.read_pfm(args.depth)
    motion = _load_motion(args.motion, args.index)
    if d.shape != v.shape[1:]:
        raise InvalidInputError(f"depth {d.shape} does not match image {v.shape[1:]}")
    synth, weight = synthesize_image(v, d, motion)
    covered = coverage(weight)
    out = _out_dir(args)
    print(io.write_png(out / "synth.png", synth.data))
    print(io.write_png(out / "coverage.png", np.repeat(covered[None].astype(float), 3, axis=0)))
    print(f"coverage={covered.mean():.6f}")
    if args.reference:
        ref = io.read_png(args.reference)
        if ref.shape != v.shape:
            raise InvalidInputError(f"reference {ref.shape} does not match image {v.shape}")
        diff = np.abs(synth.data - ref) * covered
        rmse = float(np.sqrt(np.mean(diff[:, covered] ** 2)))
        heat = np.clip(diff.mean(axis=0) / max(diff.max(), 1e-12), 0, 1)
        print(io.write_png(out / "residual.png", np.stack([heat, heat ** 2, np.zeros_like(heat)])))
        print(f"rmse={rmse:.6f}")
    return EXIT_OK


def cmd_optimize(args):
    overrides = io.read_json(args.config) if args.config else {}
    if not isinstance(overrides, dict):
        raise InvalidInputError("--config must hold a JSON object")
    for key in ("iterations", "lr", "flow", "seed", "crop_deg"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    config = build_optim_config(overrides)
    v, vp = io.read_png(args.image), io.read_png(args.image_prime)
    gt = io.read_pfm(args.gt) if args.gt else None
    if config.flow != "self-only" and gt is None:
        raise InvalidInputError(f"flow {config.flow!r} needs --gt")
    if gt is not None and gt.shape != v.shape[1:]:
        raise InvalidInputError(f"gt {gt.shape} does not match frames {v.shape[1:]}")

    out = _out_dir(args)
    try:
        result = optimize_pair(v, vp, config, gt_depth=gt)
    except DivergenceError as exc:
        io.write_jsonl(out / "trace.jsonl", exc.trace)
        raise
    written = [
        io.write_pfm(out / "depth.pfm", result.depth),
        io.write_pfm(out / "depth_prime.pfm", result.depth_prime),
        io.write_json(out / "motion.json", {"forward": result.motion_fwd.to_json(),
                                            "backward": result.motion_bwd.to_json()}),
        io.write_jsonl(out / "trace.jsonl", result.trace),
        io.write_png(out / "depth_vis.png", io.colorize_inverse_depth(result.depth)),
    ]
    summary = {"flow": config.flow, "iterations": config.iterations,
               "final_loss": result.trace[-1]["total"]}
    if gt is not None:
        summary["abs_rel"] = cropped_abs_rel(result.depth, gt, config.crop_deg)
    written.append(io.write_json(out / "summary.json", summary))
    for path in written:
        print(path)
    for key, value in summary.items():
        print(f"{key}={value}")
    return EXIT_OK


def cmd_gradcheck(args):
    names = args.op or sorted(ALL_CASES)
    failed = []
    for name in names:
        if args.inject_fault:
            with injected_fault(args.inject_fault):
                reports = run_case(name, instances=args.instances, seed=args.seed)
        else:
            reports = run_case(name, instances=args.instances, seed=args.seed)
        worst = max(r.max_error for r in reports)
        ok = all(r.passed for r in reports)
        print(f"{name}: max_rel_error={worst:.3e} {'PASS' if ok else 'FAIL'}")
        if not ok:
            failed.append(name)
    if failed:
        print(f"failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_eval(args):
    pred, gt = io.read_pfm(args.pred), io.read_pfm(args.gt)
    if pred.shape != gt.shape:
        raise InvalidInputError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    report = eval_protocol(pred, gt)
    for line in report.lines():
        print(line)
    if args.json:
        io.write_json(args.json, report.as_dict())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="panodepth", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="render a synthetic box-room sequence")
    p.add_argument("--h", type=int, default=128, help="frame height (even); width is 2h")
    p.add_argument("--steps", type=int, default=2, help="number of frames")
    p.add_argument("--step", type=float, default=0.2, help="forward step between frames (m)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--texture", choices=TEXTURES, default="smooth")
    p.add_argument("--period", type=float, default=0.8, help="texture period (m)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("warp", help="synthesize the target view of a frame")
    p.add_argument("--image", required=True, help="source frame (PNG)")
    p.add_argument("--depth", required=True, help="source radial depth (PFM)")
    p.add_argument("--motion", required=True, help="motion JSON (record or list)")
    p.add_argument("--index", type=int, default=0, help="entry to use when --motion holds a list")
    p.add_argument("--reference", help="rendered target frame for the residual map")
    p.add_argument("--out")
    p.set_defaults(func=cmd_warp)

    p = sub.add_parser("optimize", help="recover depth and motion from a frame pair")
    p.add_argument("--image", required=True)
    p.add_argument("--image-prime", required=True)
    p.add_argument("--gt", help="ground-truth depth (PFM) for supervision and scoring")
    p.add_argument("--config", help="JSON object of optimizer / loss-weight overrides")
    p.add_argument("--iterations", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--flow", choices=FLOWS)
    p.add_argument("--seed", type=int)
    p.add_argument("--crop-deg", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("gradcheck", help="finite-difference check of every gradient")
    p.add_argument("--op", action="append", choices=sorted(ALL_CASES), help="restrict to this case (repeatable)")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", metavar="OP", help="corrupt OP's backward pass (negative control)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("eval", help="aligned depth metrics of a prediction")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--json", help="also write the metrics to this file")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InvalidInputError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DivergenceError, NonFiniteError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except PanoDepthError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
