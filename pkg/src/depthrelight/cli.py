"""Command-line entry points: relight, refine, eval, sfs, gradcheck.

Exit codes: 0 success, 2 input/format problems, 3 shape/domain/parameter
problems, 4 scorer transport problems.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import fileio
from .autodiff import fd_gradient, kink_distance, render_forward, \
    render_pullback
from .errors import DomainError, FormatError, GuidanceError, NumericError, \
    ParameterError, ProtocolError, ShapeError
from .evaluate import PROTOCOLS, align, compute_metrics, metrics_csv, \
    metrics_summary
from .geometry import ORTHOGRAPHIC, PERSPECTIVE, CameraModel, \
    DisparityToDepthParams, compute_normals
from .grids import MaskGrid, RgbGrid, ScalarGrid
from .guidance import EchoScorer, OracleScorer, Scorer
from .protocol import DEFAULT_TIMEOUT, RemoteScorer
from .refine import RefineConfig, config_from_mapping, refine_ensemble
from .sfs import DEFAULT_LR, sfs_optimize, sfs_render
from .shading import relight, sample_lighting

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DOMAIN = 3
EXIT_SCORER = 4


def _load_disparity(path) -> ScalarGrid:
    suffix = Path(path).suffix.lower()
    if suffix == ".rdgr":
        return fileio.load_raw_grid(path)
    if suffix == ".pfm":
        return fileio.load_pfm(path)
    img = fileio.load_image(path)
    return ScalarGrid(img.values.mean(axis=2))


def _normals_png(normals) -> RgbGrid:
    return RgbGrid((normals.values + 1.0) / 2.0)


def _gray(img: RgbGrid) -> ScalarGrid:
    return ScalarGrid(img.values.mean(axis=2))


def cmd_relight(args) -> int:
    image = fileio.load_image(args.image)
    disp = _load_disparity(args.disparity)
    if image.shape[:2] != disp.shape:
        raise ShapeError("image and disparity shapes do not match")
    rng = np.random.default_rng(args.seed)
    light = sample_lighting(rng)
    cam = CameraModel.default(args.camera)
    normals, _ = compute_normals(disp, cam, DisparityToDepthParams())
    relit = relight(normals, image, light)
    out = Path(args.out)
    fileio.save_image(relit, out)
    fileio.save_image(_normals_png(normals),
                      out.with_name(out.stem + "_normals" + out.suffix))
    return EXIT_OK


def _scorer_factory(spec: str, image: RgbGrid, timeout: float):
    if spec == "echo":
        return lambda: EchoScorer(), spec
    if spec.startswith("oracle:"):
        ref = fileio.load_image(spec.split(":", 1)[1])
        if ref.shape != image.shape:
            raise ShapeError("oracle reference shape does not match the image")

        def make_oracle() -> Scorer:
            from .guidance import NoiseSchedule
            return OracleScorer(NoiseSchedule(), ref.values)
        return make_oracle, spec
    if spec.startswith("tcp:"):
        rest = spec.split(":", 2)
        if len(rest) != 3:
            raise ParameterError("tcp scorer expects tcp:<host>:<port>")
        host, port = rest[1], int(rest[2])
        return lambda: RemoteScorer(host, port, timeout), spec
    raise ParameterError(
        f"unknown scorer {spec!r}; expected oracle:<ref>, tcp:<host:port> "
        "or echo")


def cmd_refine(args) -> int:
    image = fileio.load_image(args.image)
    init = _load_disparity(args.init_disparity)
    mapping = fileio.load_run_config(args.config) if args.config else {}
    cfg = config_from_mapping(mapping)
    if args.runs is not None:
        cfg = replace(cfg, ensemble_runs=args.runs)
    if not cfg.prompt:
        cfg = replace(cfg, prompt=fileio.load_prompt(args.image))

    spec = os.environ.get("RD_SCORER") or args.scorer
    if not spec:
        print("error: no scorer given (use --scorer or RD_SCORER)",
              file=sys.stderr)
        return EXIT_INPUT
    timeout = mapping.get("scorer_timeout", DEFAULT_TIMEOUT)
    factory, spec_name = _scorer_factory(spec, image, timeout)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    mean, results = refine_ensemble(image, init, cfg, factory,
                                    jobs=args.jobs)
    elapsed = time.perf_counter() - start

    for i, result in enumerate(results):
        fileio.save_raw_grid(result.disparity, out_dir / f"run_{i:02d}.rdgr")
    fileio.save_raw_grid(mean, out_dir / "ensemble.rdgr")

    cfg_json = json.dumps(asdict(cfg), sort_keys=True)
    manifest = {
        "image": str(args.image),
        "init_disparity": str(args.init_disparity),
        "scorer": spec_name,
        "runs": cfg.ensemble_runs,
        "base_seed": cfg.seed,
        "run_seeds": [f"spawn({cfg.seed})[{i}]" for i in range(len(results))],
        "config": json.loads(cfg_json),
        "config_sha256": hashlib.sha256(cfg_json.encode()).hexdigest(),
        "elapsed_seconds": elapsed,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_eval(args) -> int:
    if not (len(args.pred) == len(args.gt)
            and (not args.mask or len(args.mask) == len(args.pred))):
        print("error: --pred, --gt and --mask must pair up", file=sys.stderr)
        return EXIT_INPUT
    mapping = fileio.load_run_config(args.config) if args.config else {}
    depth_cap = mapping.get("depth_cap")
    resize_mode = mapping.get("eval_resize", "bilinear")

    rows = []
    clamp_total = 0
    for i, (pred_path, gt_path) in enumerate(zip(args.pred, args.gt)):
        pred = _load_depth_like(pred_path, args.pred_scale)
        gt, gt_mask = fileio.load_depth(gt_path, png_scale=args.gt_scale)
        mask = gt_mask
        if args.mask:
            mask = MaskGrid(mask.values & fileio.load_mask(args.mask[i]).values)
        if depth_cap is not None:
            mask = MaskGrid(mask.values & (gt.values <= depth_cap))
        if pred.shape != gt.shape:
            if resize_mode == "none":
                raise ShapeError(
                    f"{pred_path}: prediction shape {pred.shape} does not "
                    f"match ground truth {gt.shape}")
            pred = ScalarGrid(
                fileio.resize_bilinear(pred.values, *gt.shape))
        aligned, clamped = align(pred, gt, mask, args.protocol)
        clamp_total += clamped
        rows.append((Path(pred_path).name,
                     compute_metrics(aligned, gt, mask)))

    report = Path(args.report)
    report.parent.mkdir(parents=True, exist_ok=True)
    Path(str(report) + ".csv").write_text(metrics_csv(rows), encoding="utf-8")
    Path(str(report) + ".json").write_text(
        metrics_summary({args.protocol: rows},
                        {args.protocol: clamp_total}), encoding="utf-8")
    return EXIT_OK


def _load_depth_like(path, png_scale) -> ScalarGrid:
    grid, _ = fileio.load_depth(path, png_scale=png_scale)
    return grid


def cmd_sfs(args) -> int:
    image = fileio.load_image(args.image)
    gray = _gray(image)
    if args.mask:
        mask = fileio.load_mask(args.mask)
        if mask.shape != gray.shape:
            raise ShapeError("mask shape does not match the image")
    else:
        mask = MaskGrid.full(*gray.shape)
    state, trace = sfs_optimize(gray, mask, args.iters, args.lr)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fileio.save_image(_normals_png(state.normals),
                      Path(str(out) + ".normals.png"))
    rendered = sfs_render(state.normals, state.light)
    fileio.save_image(RgbGrid(np.repeat(
        np.clip(rendered.values * state.l_in, 0.0, 1.0)[..., None], 3,
        axis=2)), Path(str(out) + ".render.png"))
    lines = ["step,loss"] + [f"{i},{v!r}" for i, v in enumerate(trace)]
    Path(str(out) + ".trace.csv").write_text("\n".join(lines) + "\n",
                                             encoding="utf-8")
    return EXIT_OK


def gradcheck(size: int, seed: int, rtol: float = 1e-4,
              atol: float = 1e-8) -> tuple[float, bool]:
    """Worst normalized pullback-vs-FD deviation over both camera models."""
    rng = np.random.default_rng(seed)
    disp = 0.25 + 0.5 * rng.random((size, size))
    image = np.clip(0.2 + 0.6 * rng.random((size, size, 3)), 0.0, 1.0)
    worst = 0.0
    ok = True
    for kind in (ORTHOGRAPHIC, PERSPECTIVE):
        light = sample_lighting(rng)
        cam = CameraModel.default(kind)
        dparams = DisparityToDepthParams()
        cot = rng.standard_normal((size, size, 3))
        tape = render_forward(disp, image, light, cam, dparams)
        analytic = render_pullback(tape, cot).disparity

        # A disparity pixel reaches rendered pixels one step away, so stay
        # clear of kinks over each pixel's 3x3 neighborhood.
        margin = ndimage.minimum_filter(kink_distance(tape), size=3)
        safe = margin > 1e-4

        def scalar(d):
            t = render_forward(d, image, light, cam, dparams)
            return float(np.sum(t.rendered * cot))

        fd = fd_gradient(scalar, disp.copy(), eps=1e-6)
        dev = np.abs(analytic - fd)[safe]
        bound = (atol + rtol * np.abs(fd))[safe]
        if dev.size:
            worst = max(worst, float((dev / np.maximum(bound, 1e-300)).max()))
            ok = ok and bool((dev <= bound).all())
    return worst, ok


def cmd_gradcheck(args) -> int:
    worst, ok = gradcheck(args.size, args.seed)
    print(f"max FD deviation: {worst:.3e} x tolerance "
          f"({'ok' if ok else 'FAIL'})")
    return EXIT_OK if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="depthrelight",
        description="Depth refinement by re-lighting with score guidance")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("relight", help="render a re-lit preview + normal map")
    p.add_argument("--image", required=True)
    p.add_argument("--disparity", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--camera", choices=[ORTHOGRAPHIC, PERSPECTIVE],
                   default=ORTHOGRAPHIC)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_relight)

    p = sub.add_parser("refine", help="test-time refinement with ensembling")
    p.add_argument("--image", required=True)
    p.add_argument("--init-disparity", required=True)
    p.add_argument("--config")
    p.add_argument("--scorer",
                   help="oracle:<ref-path> | tcp:<host:port> | echo "
                        "(RD_SCORER env overrides)")
    p.add_argument("--runs", type=int, default=None,
                   help="override ensemble_runs (default 10)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("eval", help="align predictions and report metrics")
    p.add_argument("--pred", nargs="+", required=True)
    p.add_argument("--gt", nargs="+", required=True)
    p.add_argument("--mask", nargs="*", default=[])
    p.add_argument("--protocol", choices=PROTOCOLS, required=True)
    p.add_argument("--report", required=True,
                   help="path prefix for the .csv and .json reports")
    p.add_argument("--config")
    p.add_argument("--gt-scale", type=float, default=1.0 / 256.0,
                   help="scale for 16-bit PNG ground truth")
    p.add_argument("--pred-scale", type=float, default=1.0 / 256.0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sfs", help="shape-from-shading baseline")
    p.add_argument("--image", required=True)
    p.add_argument("--mask")
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--lr", type=float, default=DEFAULT_LR)
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(func=cmd_sfs)

    p = sub.add_parser("gradcheck", help="finite-difference self check")
    p.add_argument("--size", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FormatError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (ShapeError, DomainError, ParameterError, NumericError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DOMAIN
    except (GuidanceError, ProtocolError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SCORER
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
