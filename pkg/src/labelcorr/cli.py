"""Command-line entry point: ``labelcorr <subcommand> ...``.

Exit codes: 0 success, 1 internal error, 2 usage or input error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import io
from .annot import buffer_rasterize
from .metrics import evaluate
from .pipeline import PipelineConfig, correct_map
from .render import render_overlay
from .synth import CorruptionSpec, SynthSpec, corrupt_annotations, gen_scene
from .vectorize import vectorize_mask

log = logging.getLogger("labelcorr")


def _out_dir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise io.InputError(f"{p}: cannot create output directory ({exc.strerror})") from None
    if not p.is_dir():
        raise io.InputError(f"{p}: not a directory")
    return p


def _out_file(path) -> Path:
    p = Path(path)
    _out_dir(p.parent if str(p.parent) else ".")
    return p


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig()
    if getattr(args, "config", None):
        try:
            cfg = PipelineConfig.from_dict(io.read_json(args.config))
        except (TypeError, ValueError) as exc:
            raise io.InputError(f"{args.config}: {exc}") from None
    lam = getattr(args, "lam", None)
    if lam is not None and lam != "auto":
        try:
            lam = float(lam)
        except ValueError:
            raise io.InputError(f"--lambda must be a number or 'auto', got {lam!r}") from None
    try:
        return cfg.override(
            lam=lam,
            annotation_radius=getattr(args, "annotation_radius", None),
            poi_radius=getattr(args, "poi_radius", None),
            workers=getattr(args, "workers", None),
            tol=getattr(args, "tol", None),
            control_spacing=getattr(args, "spacing", None),
        )
    except (TypeError, ValueError) as exc:
        raise io.InputError(str(exc)) from None


def cmd_synth(args) -> int:
    doc = io.read_json(args.spec) if args.spec else {}
    try:
        spec = SynthSpec.from_dict(doc.get("scene", {}))
        cspec = CorruptionSpec.from_dict(doc.get("corruption", {}))
    except (TypeError, ValueError) as exc:
        raise io.InputError(f"{args.spec}: {exc}") from None
    out = _out_dir(args.out)
    img, gt_lines, gt_mask = gen_scene(spec, args.seed)
    lines, truth = corrupt_annotations(gt_lines, cspec, args.seed, spec.canvas, avoid=gt_mask)
    io.save_image(out / "image.png", img)
    io.save_mask(out / "gt_mask.png", gt_mask)
    io.write_json(out / "gt.geojson", io.polylines_to_geojson(gt_lines))
    io.write_json(out / "annotations.geojson", io.polylines_to_geojson(lines))
    io.write_json(out / "truth.json", {
        "seed": args.seed, "scene": spec.to_dict(), "corruption": cspec.to_dict(),
        "lines": [vars(t) for t in truth],
    })
    return 0


def cmd_annotate(args) -> int:
    img = io.load_image(args.map)
    lines = io.read_polylines(args.vector, args.world_affine)
    if args.radius < 0:
        raise io.InputError("--radius must be >= 0")
    io.save_mask(_out_file(args.out), buffer_rasterize(lines, args.radius, img.shape[:2]))
    return 0


def cmd_correct(args) -> int:
    cfg = _load_config(args)
    img = io.load_image(args.map)
    lines = io.read_polylines(args.vector, args.world_affine)
    if min(img.shape[:2]) < 32:
        raise io.InputError(f"{args.map}: map must be at least 32x32 pixels")
    res = correct_map(img, lines, cfg.lca, annotation_radius=cfg.annotation_radius,
                      poi_radius=cfg.poi_radius, window=cfg.window, overlap=cfg.overlap,
                      workers=cfg.workers)
    io.save_mask(_out_file(args.out), res.mask)
    if args.report:
        io.write_json(_out_file(args.report), res.report())
    if res.tiles and res.n_rejected == len(res.tiles):
        print("warning: every tile was rejected as a false annotation", file=sys.stderr)
    return 0


def cmd_vectorize(args) -> int:
    mask = io.load_mask(args.mask)
    graph = vectorize_mask(mask, min_component_px=args.min_component_px,
                           turn_angle_min=args.turn_angle)
    io.write_graph(_out_file(args.out), graph)
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    pred_g = io.read_graph(args.pred) if args.pred else None
    gt_g = io.read_graph(args.gt) if args.gt else None
    pred_m = io.load_mask(args.pred_mask) if args.pred_mask else None
    gt_m = io.load_mask(args.gt_mask) if args.gt_mask else None
    if (pred_g is None) != (gt_g is None) or (pred_m is None) != (gt_m is None):
        raise io.InputError("give predictions and ground truth in pairs")
    if pred_g is None and pred_m is None:
        raise io.InputError("nothing to evaluate")
    if pred_m is not None and pred_m.shape != gt_m.shape:
        raise io.InputError("prediction and ground-truth masks differ in size")
    report = evaluate(pred_g, gt_g, pred_m, gt_m, tol=cfg.tol, control_spacing=cfg.control_spacing)
    if args.out:
        io.write_json(_out_file(args.out), report)
    else:
        sys.stdout.write(io.dumps(report))
    return 0


def cmd_render(args) -> int:
    img = io.load_image(args.map)
    mask = io.load_mask(args.mask) if args.mask else None
    gt = io.load_mask(args.gt_mask) if args.gt_mask else None
    for m in (mask, gt):
        if m is not None and m.shape != img.shape[:2]:
            raise io.InputError("mask and map differ in size")
    graphs = [io.read_graph(p) for p in args.graph or []]
    out = render_overlay(img, mask, gt if mask is not None else None, graphs)
    io.save_image(_out_file(args.out), out.astype(float) / 255.0)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="labelcorr", description="Correct line annotations on scanned maps.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene bundle")
    p.add_argument("--spec", help="JSON with optional 'scene' and 'corruption' objects")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("annotate", help="rasterize buffered vector lines into a mask")
    p.add_argument("--map", required=True, help="map PNG (sets the canvas size)")
    p.add_argument("--vector", required=True, help="GeoJSON lines in pixel coordinates")
    p.add_argument("--world-affine", help="JSON {a..f} mapping world to pixel coordinates")
    p.add_argument("--radius", type=float, default=5.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("correct", help="run label correction tile by tile")
    p.add_argument("--map", required=True)
    p.add_argument("--vector", required=True)
    p.add_argument("--world-affine")
    p.add_argument("--config", help="JSON pipeline config; flags override it")
    p.add_argument("--lambda", dest="lam", help="shape weight, a number or 'auto'")
    p.add_argument("--poi-radius", type=float)
    p.add_argument("--annotation-radius", type=float)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", required=True, help="corrected mask PNG")
    p.add_argument("--report", help="per-tile report JSON")
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser("vectorize", help="mask PNG to GeoJSON line graph")
    p.add_argument("--mask", required=True)
    p.add_argument("--min-component-px", type=int, default=4)
    p.add_argument("--turn-angle", type=float, default=30.0, help="turning-node threshold (degrees)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_vectorize)

    p = sub.add_parser("eval", help="pixel and line metrics as JSON")
    p.add_argument("--pred", help="predicted GeoJSON lines")
    p.add_argument("--gt", help="ground-truth GeoJSON lines")
    p.add_argument("--pred-mask")
    p.add_argument("--gt-mask")
    p.add_argument("--config")
    p.add_argument("--tol", type=float)
    p.add_argument("--spacing", type=float, help="APLS control-point spacing")
    p.add_argument("--out", help="report path (stdout if omitted)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="overlay masks and lines on the map")
    p.add_argument("--map", required=True)
    p.add_argument("--mask")
    p.add_argument("--gt-mask", help="colour mask pixels green (TP) / red (FP)")
    p.add_argument("--graph", action="append", help="GeoJSON lines to draw (repeatable)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except io.InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:                # noqa: BLE001 - report, never traceback
        log.debug("internal error", exc_info=True)
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
