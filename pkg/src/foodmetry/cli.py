"""Command-line interface.

Subcommands: keyframes, scale, refine, volume, align, evaluate, run,
validate-report. Exit codes: 0 on success, 1 when per-object failures
occurred, 2 on configuration errors (bad flags, unreadable manifests).

Every flag has a config-file twin: pass ``--config settings.ini`` with a
section per subcommand (flag names with dashes replaced by underscores);
explicit command-line flags override the file.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from pathlib import Path

from . import __version__, images
from .align import align_pipeline, save_transform
from .errors import FoodmetryError
from .frames import DEFAULT_BLUR_RADII
from .geometry import SimilarityTransform, apply_transform
from .meshio import load_mesh, save_mesh
from .metrics import mesh_volume
from .pipeline import PipelineConfig, run_full, run_keyframes_stage
from .refine import (
    SmoothingParams,
    SupportPlane,
    cap_base,
    estimate_support_plane,
    fill_holes,
    laplacian_smooth,
    remove_isolated_pieces,
)
from .report import (
    DEFAULT_EXCLUDED_IDS,
    DatasetManifest,
    merge_reports,
    run_phase1,
    run_phase2,
    validate_report,
    write_report,
)
from .scale import (
    CheckerboardSpec,
    depth_scale_check,
    estimate_scale_block_lengths,
    estimate_scale_corner_projection,
    refine_scale,
    ScaleEstimate,
)
from .sfm import parse_bundle

logger = logging.getLogger(__name__)

CONFIG_ERROR = 2
OBJECT_FAILURES = 1


def _int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.replace(",", " ").split()]


def _float_list(text: str) -> list[float]:
    return [float(tok) for tok in text.replace(",", " ").split()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="foodmetry",
        description="Metric scaling, refinement and volume/shape scoring "
                    "for reconstructed 3D food meshes.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="INI file with one section per subcommand")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keyframes", help="select sharp, non-duplicate frames")
    p.add_argument("--frames-dir", required=True)
    p.add_argument("--hash-threshold", type=int, default=12)
    p.add_argument("--blur-threshold", type=float, default=10.0)
    p.add_argument("--blur-radii", type=_int_list,
                   default=list(DEFAULT_BLUR_RADII), metavar="R0,R1,...")
    p.add_argument("--out", required=True, metavar="manifest.json")

    p = sub.add_parser("scale", help="estimate meters per model unit")
    p.add_argument("--method", choices=["corner", "block", "depth"], required=True)
    p.add_argument("--square-mm", type=float, default=12.0,
                   help="checkerboard square edge length in millimeters")
    p.add_argument("--bundle", help="SfM text bundle directory (corner method)")
    p.add_argument("--images-dir", help="directory holding the bundle's images")
    p.add_argument("--intensity-threshold", type=int, default=240)
    p.add_argument("--lengths", type=_float_list, metavar="L0,L1,...",
                   help="measured block lengths in model units (block method)")
    p.add_argument("--depth", help="16-bit depth PNG (depth method)")
    p.add_argument("--ref-mask", help="reference object mask PNG (depth method)")
    p.add_argument("--food-mask", help="food object mask PNG (depth method)")
    p.add_argument("--ref-width-cm", type=float, help="reference physical width (depth method)")
    p.add_argument("--mesh", help="unitless candidate mesh (depth method)")
    p.add_argument("--candidates", type=_float_list, metavar="S0,S1,...",
                   help="candidate scale factors to validate (depth method)")
    p.add_argument("--out", required=True, metavar="scale.json")

    p = sub.add_parser("refine", help="clean and close a reconstructed mesh")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--remove-isolated", type=float, metavar="FRACTION",
                   help="drop components at or under this fraction of mesh size")
    p.add_argument("--smooth", metavar="lambda=0.2,iters=10")
    p.add_argument("--fill-holes", type=int, metavar="MAX_EDGES")
    p.add_argument("--cap-base", metavar="auto|nx,ny,nz,offset")
    p.add_argument("--scale", type=float, help="apply this metric scale factor last")

    p = sub.add_parser("volume", help="watertight mesh volume in cm³")
    p.add_argument("--mesh", required=True)
    p.add_argument("--out", metavar="volume.json")

    p = sub.add_parser("align", help="align a predicted mesh to ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--samples", type=int, default=50_000)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True, metavar="transform.txt")
    p.add_argument("--log", metavar="stages.json")
    p.add_argument("--chamfer-x1000", action="store_true",
                   help="also print Chamfer values multiplied by 1000")

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--pairs", required=True, metavar="manifest.json")
    p.add_argument("--pred-dir")
    p.add_argument("--gt-dir")
    p.add_argument("--phase", choices=["1", "2", "both"], default="both")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--exclude", type=_int_list,
                   default=sorted(DEFAULT_EXCLUDED_IDS), metavar="ID,ID")
    p.add_argument("--out", required=True, metavar="report.json")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--chamfer-x1000", action="store_true")

    p = sub.add_parser("run", help="full pipeline over a dataset manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--samples", type=int, default=50_000)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--exclude", type=_int_list,
                   default=sorted(DEFAULT_EXCLUDED_IDS), metavar="ID,ID")
    p.add_argument("--hash-threshold", type=int, default=12)
    p.add_argument("--blur-threshold", type=float, default=10.0)
    p.add_argument("--square-mm", type=float, default=12.0)
    p.add_argument("--remove-isolated", type=float, default=0.05)
    p.add_argument("--smooth", default="lambda=0.2,iters=10")
    p.add_argument("--fill-holes", type=int, default=64)
    p.add_argument("--cap-base", choices=["auto", "off"], default="auto")
    p.add_argument("--scale-candidates", type=_float_list, default=[], metavar="S0,S1")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("validate-report", help="check a report's internal consistency")
    p.add_argument("--report", required=True)

    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Inject config-file values as subcommand defaults; flags still win."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, rest = probe.parse_known_args(argv)
    if not known.config:
        return argv
    config_path = Path(known.config)
    if not config_path.is_file():
        raise FoodmetryError(f"config file not found: {config_path}")
    ini = configparser.ConfigParser()
    ini.read(config_path)
    command = next((a for a in rest if not a.startswith("-")), None)
    if command is None or command not in ini:
        return argv
    subparsers = next(a for a in parser._actions
                      if isinstance(a, argparse._SubParsersAction))
    sub = subparsers.choices[command]
    defaults = {}
    for key, raw in ini[command].items():
        dest = key.replace("-", "_")
        action = next((a for a in sub._actions if a.dest == dest), None)
        if action is None:
            raise FoodmetryError(f"config [{command}] {key}: unknown option")
        if isinstance(action, argparse._StoreTrueAction):
            defaults[dest] = ini[command].getboolean(key)
        elif action.type is not None:
            defaults[dest] = action.type(raw)
        else:
            defaults[dest] = raw
        action.required = False  # satisfied by the config file
    sub.set_defaults(**defaults)
    return argv


def _parse_smooth(spec: str) -> SmoothingParams:
    lam, iters = 0.2, 10
    for part in spec.split(","):
        key, _, value = part.partition("=")
        key = key.strip()
        if key in ("lambda", "lam"):
            lam = float(value)
        elif key in ("iters", "iterations"):
            iters = int(value)
        else:
            raise FoodmetryError(f"bad smoothing spec {spec!r} (expected lambda=..,iters=..)")
    return SmoothingParams(lam, iters)


def _cmd_keyframes(args) -> int:
    payload = run_keyframes_stage(
        Path(args.frames_dir), Path(args.out), args.hash_threshold,
        args.blur_threshold, tuple(args.blur_radii))
    kept = len(payload["selected_indices"])
    total = len(payload["decisions"])
    print(f"kept {kept} of {total} frames ({100.0 * kept / total:.1f}%) -> {args.out}")
    return 0


def _cmd_scale(args) -> int:
    board = CheckerboardSpec(args.square_mm / 1000.0)
    if args.method == "corner":
        if not args.bundle or not args.images_dir:
            raise FoodmetryError("corner method needs --bundle and --images-dir")
        bundle = parse_bundle(args.bundle)
        images_dir = Path(args.images_dir)
        pairs = []
        for name in sorted(bundle.cameras):
            path = images_dir / name
            if path.is_file():
                pairs.append((name, images.load_gray(path)))
        if not pairs:
            raise FoodmetryError(f"none of the bundle's images exist under {images_dir}")
        estimate = estimate_scale_corner_projection(
            bundle, pairs, board, args.intensity_threshold)
    elif args.method == "block":
        if not args.lengths:
            raise FoodmetryError("block method needs --lengths")
        estimate = estimate_scale_block_lengths(args.lengths, board)
    else:  # depth
        needed = ("depth", "ref_mask", "food_mask", "ref_width_cm", "mesh", "candidates")
        if any(getattr(args, k) is None for k in needed):
            raise FoodmetryError(
                "depth method needs --depth --ref-mask --food-mask "
                "--ref-width-cm --mesh --candidates")
        check = depth_scale_check(
            images.load_depth(args.depth), images.load_mask(args.ref_mask),
            images.load_mask(args.food_mask), args.ref_width_cm)
        mesh = load_mesh(args.mesh)
        candidates = [ScaleEstimate(s, "depth_bbox") for s in args.candidates]
        estimate = refine_scale(candidates, mesh, check.potential_volume)
    payload = {
        "scale": estimate.scale,
        "method": estimate.method,
        "per_image_medians": estimate.per_image_medians,
    }
    Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"scale {estimate.scale:.9g} ({estimate.method}) -> {args.out}")
    return 0


def _cmd_refine(args) -> int:
    mesh = load_mesh(args.input)
    if args.remove_isolated is not None:
        mesh = remove_isolated_pieces(mesh, args.remove_isolated)
    if args.smooth is not None:
        mesh = laplacian_smooth(mesh, _parse_smooth(args.smooth))
    open_loops = []
    if args.fill_holes is not None:
        mesh, open_loops = fill_holes(mesh, args.fill_holes)
        if open_loops:
            print(f"left {len(open_loops)} loop(s) open "
                  f"(sizes {sorted(len(l) for l in open_loops)})")
    if args.cap_base is not None:
        if args.cap_base == "auto":
            plane = estimate_support_plane(mesh)
        else:
            nx, ny, nz, offset = _float_list(args.cap_base)
            plane = SupportPlane([nx, ny, nz], offset)
        mesh = cap_base(mesh, plane)
    if args.scale is not None:
        mesh = apply_transform(mesh, SimilarityTransform.pure_scale(args.scale))
    save_mesh(mesh, args.output)
    print(f"refined mesh: {mesh.n_vertices} vertices, {mesh.n_faces} faces -> {args.output}")
    return 0


def _cmd_volume(args) -> int:
    result = mesh_volume(load_mesh(args.mesh))
    payload = {
        "volume_cm3": result.volume_cm3,
        "watertight": result.watertight,
        "boundary_edge_count": result.boundary_edge_count,
    }
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    flag = "" if result.watertight else "  [not watertight: approximate]"
    print(f"volume {result.volume_cm3:.3f} cm³{flag}")
    return 0


def _cmd_align(args) -> int:
    result = align_pipeline(load_mesh(args.pred), load_mesh(args.gt),
                            n_samples=args.samples, seed=args.seed)
    save_transform(result.transform, args.out)
    if args.log:
        payload = {
            "chamfer_before": result.chamfer_before,
            "chamfer_after_icp": result.chamfer_after_icp,
            "chamfer_final": result.chamfer_final,
            "stage_log": result.stage_log,
            "n_samples": args.samples,
            "seed": args.seed,
        }
        Path(args.log).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    factor, unit = (1000.0, " x10^-3 m²") if args.chamfer_x1000 else (1.0, " m²")
    print(f"chamfer before {result.chamfer_before * factor:.6g}{unit}, "
          f"after {result.chamfer_final * factor:.6g}{unit} -> {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    manifest = DatasetManifest.load(args.pairs)
    excluded = frozenset(args.exclude)
    pred_dir = Path(args.pred_dir) if args.pred_dir else None
    gt_dir = Path(args.gt_dir) if args.gt_dir else None
    out = Path(args.out)
    if args.phase in ("1", "both"):
        volume_report = run_phase1(manifest, excluded, pred_dir, gt_dir)
    if args.phase in ("2", "both"):
        shape_report = run_phase2(manifest, args.samples, args.seed, excluded,
                                  pred_dir, gt_dir,
                                  transform_dir=out.parent / "transforms")
    if args.phase == "1":
        report = volume_report
    elif args.phase == "2":
        report = shape_report
    else:
        report = merge_reports(volume_report, shape_report)
    write_report(report, out, figures=not args.no_figures)
    aggregate = report.aggregate
    if aggregate["mape_pct"] is not None:
        print(f"MAPE {aggregate['mape_pct']:.3f}% over {aggregate['n_volume']} objects")
    if aggregate["chamfer_mean"] is not None:
        factor, unit = (1000.0, " x10^-3 m²") if args.chamfer_x1000 else (1.0, " m²")
        print(f"Chamfer sum {aggregate['chamfer_sum'] * factor:.6g}{unit}, "
              f"mean {aggregate['chamfer_mean'] * factor:.6g}{unit} "
              f"over {aggregate['n_chamfer']} objects")
    print(f"report -> {out}")
    return OBJECT_FAILURES if report.failed_ids else 0


def _cmd_run(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    smooth = _parse_smooth(args.smooth)
    config = PipelineConfig(
        out_dir=Path(args.out_dir),
        n_samples=args.samples,
        seed=args.seed,
        workers=args.workers,
        excluded_ids=frozenset(args.exclude),
        figures=not args.no_figures,
        hash_threshold=args.hash_threshold,
        blur_threshold=args.blur_threshold,
        square_length=args.square_mm / 1000.0,
        scale_candidates=tuple(args.scale_candidates),
        isolated_fraction=args.remove_isolated,
        smooth_lambda=smooth.lam,
        smooth_iterations=smooth.iterations,
        fill_holes_max=args.fill_holes,
        cap_base_mode=args.cap_base,
    )
    report = run_full(manifest, config)
    write_report(report, config.out_dir / "report.json", figures=config.figures)
    aggregate = report.aggregate
    print(f"processed {len(report.per_object)} objects "
          f"({len(report.failed_ids)} failed); report -> {config.out_dir / 'report.json'}")
    if aggregate["mape_pct"] is not None:
        print(f"MAPE {aggregate['mape_pct']:.3f}%")
    if aggregate["chamfer_mean"] is not None:
        print(f"Chamfer mean {aggregate['chamfer_mean']:.6g} m²")
    return OBJECT_FAILURES if report.failed_ids else 0


def _cmd_validate_report(args) -> int:
    with open(args.report, "r", encoding="utf-8") as fh:
        report = json.load(fh)
    problems = validate_report(report)
    if problems:
        for problem in problems:
            print(f"INCONSISTENT: {problem}")
        return OBJECT_FAILURES
    print("report is internally consistent")
    return 0


_COMMANDS = {
    "keyframes": _cmd_keyframes,
    "scale": _cmd_scale,
    "refine": _cmd_refine,
    "volume": _cmd_volume,
    "align": _cmd_align,
    "evaluate": _cmd_evaluate,
    "run": _cmd_run,
    "validate-report": _cmd_validate_report,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config_file(parser, argv)
    except (FoodmetryError, configparser.Error) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return CONFIG_ERROR
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    logging.getLogger("PIL").setLevel(logging.WARNING)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, OSError) as exc:
        # Covers manifest/mesh validation failures and unreadable inputs.
        print(f"error: {exc}", file=sys.stderr)
        return CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
