"""Command-line pipeline: synth, detect, reconstruct, stereo, rectify, eval."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import formats
from .core import OpticalConfig, RasterGray
from .detect import detect_drops
from .errors import DomainError
from .raytrace import render_depth_truth, render_synthetic
from .rectify import rectify_drop
from .scenes import read_scene
from .solver import solve_fixed_volume
from .stereo import BlockMatchParams, Correspondence, depth_from_drops
from .volume_loop import estimate_shape

log = logging.getLogger("dropstereo")


def _setup_logging() -> None:
    level = os.environ.get("DROPSTEREO_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _load_config(path: str) -> formats.PipelineConfig:
    _require_file(path)
    return formats.read_config(path)


def _require_file(path: str) -> None:
    if not Path(path).is_file():
        raise DomainError(f"input file not found: {path}")


def _load_gray(path: str) -> RasterGray:
    _require_file(path)
    img = formats.read_pnm(path)
    if img.ndim == 3:
        img = img.mean(axis=2)
    return RasterGray(img)


def _solve_drop(mask, alpha, cfg):
    from .solver import initial_volume

    return solve_fixed_volume(mask, initial_volume(mask, alpha), cfg.solver, cfg.optics)


def cmd_synth(args) -> int:
    cfg = _load_config(args.config)
    _require_file(args.scene)
    scene, drop_specs = read_scene(args.scene)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    shape = (scene.height, scene.width)
    masks = [spec.build_mask(shape) for spec in drop_specs]

    def solve_one(pair):
        mask, spec = pair
        hf, rep = _solve_drop(mask, spec.alpha, cfg)
        log.info("drop solved: alpha=%.2f iters=%d", spec.alpha, rep.iterations_run)
        return hf

    jobs = args.jobs or max(len(masks), 1)
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        fields = list(pool.map(solve_one, zip(masks, drop_specs)))

    drops = list(zip(masks, fields))
    image = render_synthetic(scene, drops, cfg.optics)
    formats.write_pnm(out / "image.pgm", image.pixels)
    for k, (mask, hf) in enumerate(drops):
        formats.write_mask(out / f"mask_{k}.pgm", mask)
        formats.write_height_field(out / f"height_{k}.pfm", hf)
        formats.write_pfm(out / f"depth_truth_{k}.pfm",
                          render_depth_truth(scene, hf, cfg.optics))
    print(f"synth: wrote image and {len(drops)} drop(s) to {out}")
    return 0


def cmd_detect(args) -> int:
    cfg = _load_config(args.config)
    image = _load_gray(args.image)
    masks = detect_drops(image, cfg.detect)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k, mask in enumerate(masks):
        formats.write_mask(out / f"mask_{k}.pgm", mask)
    print(f"detect: {len(masks)} drop(s) -> {out}")
    return 0


def cmd_reconstruct(args) -> int:
    cfg = _load_config(args.config)
    image = _load_gray(args.image)
    _require_file(args.mask)
    mask = formats.read_mask(args.mask)
    if args.estimate_volume:
        hf, alpha_est, loop = estimate_shape(image, mask, cfg.optics, cfg.solver,
                                             cfg.volume_loop)
        rep = loop.solve
        extras = {"outer_updates": loop.outer_updates,
                  "volume_history": list(loop.volume_history)}
    else:
        alpha_est = args.alpha if args.alpha is not None else cfg.volume_loop.alpha_init
        hf, _, loop = estimate_shape(image, mask, cfg.optics, cfg.solver,
                                     cfg.volume_loop, fixed_alpha=alpha_est)
        rep = loop.solve
        extras = {}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    formats.write_height_field(out, hf)
    report = {
        "alpha_est": alpha_est,
        "iterations": rep.iterations_run,
        "converged": rep.converged,
        "tension_energy": rep.tension_energy,
        "gravity_energy": rep.gravity_energy,
        "final_energy": rep.final_energy,
        **extras,
    }
    out.with_suffix(".json").write_text(json.dumps(report, indent=2) + "\n")
    print(f"reconstruct: alpha={alpha_est:.4f} iters={rep.iterations_run} -> {out}")
    return 0


def cmd_stereo(args) -> int:
    cfg = _load_config(args.config)
    image = _load_gray(args.image)
    fields = []
    for path in args.drops.split(","):
        _require_file(path)
        fields.append(formats.read_height_field(path))
    corr = None
    if args.correspondences:
        _require_file(args.correspondences)
        corr = [Correspondence(da, db, (ia, ja), (ib, jb), s)
                for da, ia, ja, db, ib, jb, s
                in formats.read_correspondences(args.correspondences)]
    result = depth_from_drops(image, fields, cfg.optics, correspondences=corr,
                              match_params=BlockMatchParams())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k, dm in enumerate(result.depth_maps):
        formats.write_pfm(out / f"depth_{k}.pfm", dm)
    with open(out / "points.csv", "w") as f:
        f.write("x,y,z,residual,valid\n")
        for p, r, ok in zip(result.points, result.residuals, result.valid):
            f.write(f"{p.x!r},{p.y!r},{p.z!r},{r!r},{int(ok)}\n")
    valid_depths = result.depths[result.valid]
    stats = {
        "points": int(len(result.points)),
        "valid_points": int(result.valid.sum()),
        "median_depth": float(np.median(valid_depths)) if valid_depths.size else None,
        "median_residual": float(np.median(result.residuals)),
    }
    (out / "residuals.json").write_text(json.dumps(stats, indent=2) + "\n")
    print(f"stereo: {stats['valid_points']}/{stats['points']} valid points -> {out}")
    return 0


def cmd_rectify(args) -> int:
    cfg = _load_config(args.config)
    image = _load_gray(args.image)
    _require_file(args.drop)
    hf = formats.read_height_field(args.drop)
    if args.depth:
        _require_file(args.depth)
        depth_map = formats.read_pfm(args.depth)
        depths = depth_map[np.isfinite(depth_map)]
        if depths.size == 0:
            raise DomainError(f"{args.depth}: depth map has no valid values")
        depth = float(np.median(depths))
    else:
        depth = args.plane_depth
    view = rectify_drop(image, hf, cfg.optics, depth)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    formats.write_pnm(out, view.raster.pixels)
    sidecar = {
        "plane_depth": view.plane_depth,
        "valid_fraction": float(view.valid.mean()),
        "origin": list(view.origin),
        "scale": view.scale,
    }
    out.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")
    print(f"rectify: depth={view.plane_depth:.1f} -> {out}")
    return 0


def cmd_eval(args) -> int:
    _require_file(args.pred)
    _require_file(args.truth)
    pred = formats.read_pfm(args.pred)
    truth = formats.read_pfm(args.truth)
    if pred.shape != truth.shape:
        raise DomainError("prediction and truth grids differ")
    both = np.isfinite(pred) & np.isfinite(truth)
    if not both.any():
        raise DomainError("no overlapping valid pixels to compare")
    err = pred[both] - truth[both]
    rms = float(np.sqrt((err**2).mean()))
    median_abs = float(np.median(np.abs(err)))
    if args.normalize == "diameter":
        normalizer = 2.0 * float(np.sqrt(np.isfinite(truth).sum() / np.pi))
    else:
        normalizer = float(np.median(truth[np.isfinite(truth)]))
    report = {
        "rms": rms,
        "median_abs": median_abs,
        "normalizer": normalizer,
        "normalize_by": args.normalize,
        "rms_pct": 100.0 * rms / normalizer,
        "median_pct": 100.0 * median_abs / normalizer,
        "n_valid": int(both.sum()),
    }
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(report, indent=2) + "\n")
    print(f"eval: rms={rms:.4f} ({report['rms_pct']:.2f}% of {args.normalize}) -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dropstereo",
                                     description="Depth and rectification from adherent "
                                                 "water drops")
    parser.add_argument("--seed", type=int, default=0,
                        help="seed for any randomized tie-breaking (outputs are "
                             "deterministic for a fixed seed)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic scene with ground truth")
    p.add_argument("--scene", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("detect", help="find drop masks in an image")
    p.add_argument("--image", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("reconstruct", help="solve one drop surface")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--alpha", type=float, default=None,
                   help="fixed volume coefficient")
    g.add_argument("--estimate-volume", action="store_true",
                   help="estimate the volume from the dark band")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("stereo", help="triangulate depth from two or more drops")
    p.add_argument("--image", required=True)
    p.add_argument("--drops", required=True, help="comma-separated height-field PFMs")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--correspondences", default=None)
    p.set_defaults(func=cmd_stereo)

    p = sub.add_parser("rectify", help="unwarp one drop view onto a depth plane")
    p.add_argument("--image", required=True)
    p.add_argument("--drop", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--depth", default=None, help="depth PFM (median of valid values)")
    g.add_argument("--plane-depth", type=float, default=None)
    p.set_defaults(func=cmd_rectify)

    p = sub.add_parser("eval", help="compare a prediction PFM against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--normalize", choices=("diameter", "depth"), default="diameter")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    np.random.seed(args.seed)
    try:
        return args.func(args)
    except Exception as exc:  # surface a clean one-line failure
        log.debug("traceback", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
