"""End-to-end per-object pipeline: keyframes, scale, refine, volume, align.

Every stage persists its output under an object-scoped directory and is
skipped (with a log line) when that output already exists, so reruns are
cheap and reproduce byte-identical JSON. Stage failures are recorded on
the object's report row; the run continues with the remaining objects.

Expected capture layout per object (all parts optional):

    frames_dir/
        rgb/<name>.png        RGB frames (keyframe selection input)
        depth/<name>.png      16-bit millimeter depth maps
        food_mask/<name>.png  food object masks
        ref_mask/<name>.png   reference object masks
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from . import images
from .align import align_pipeline, save_transform
from .errors import FoodmetryError
from .frames import DEFAULT_BLUR_RADII, FrameRecord, select_keyframes
from .geometry import SimilarityTransform, TriangleMesh, apply_transform
from .meshio import load_mesh, save_mesh
from .metrics import boundary_edge_count, mape, mesh_volume
from .refine import (
    SmoothingParams,
    cap_base,
    estimate_support_plane,
    fill_holes,
    laplacian_smooth,
    remove_isolated_pieces,
)
from .report import (
    DEFAULT_EXCLUDED_IDS,
    DatasetManifest,
    EvaluationReport,
    ManifestObject,
    _object_row,
    atomic_write_text,
    load_object_mesh,
)
from .scale import (
    CheckerboardSpec,
    ScaleEstimate,
    depth_scale_check,
    estimate_scale_corner_projection,
    refine_scale,
)
from .sfm import parse_bundle

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    out_dir: Path
    n_samples: int = 50_000
    seed: int = 7
    workers: int = 1
    excluded_ids: frozenset[int] = DEFAULT_EXCLUDED_IDS
    figures: bool = True
    # keyframes
    hash_threshold: int = 12
    blur_threshold: float = 10.0
    blur_radii: tuple[int, ...] = DEFAULT_BLUR_RADII
    # scale
    square_length: float = 0.012
    corner_intensity_threshold: int = 240
    scale_candidates: tuple[float, ...] = ()
    # refinement
    isolated_fraction: float = 0.05
    smooth_lambda: float = 0.2
    smooth_iterations: int = 10
    fill_holes_max: int = 64
    cap_base_mode: str = "auto"  # "auto" | "off"

    def __post_init__(self):
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        object.__setattr__(self, "excluded_ids", frozenset(self.excluded_ids))
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.cap_base_mode not in ("auto", "off"):
            raise ValueError(f"cap_base_mode must be 'auto' or 'off', got {self.cap_base_mode!r}")


def _write_json(path: Path, data: dict) -> None:
    atomic_write_text(path, json.dumps(data, indent=2, sort_keys=True) + "\n")


def _read_json(path: Path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _list_pngs(directory: Path) -> list[Path]:
    return sorted(directory.glob("*.png"))


def _frame_index(path: Path, fallback: int) -> int:
    digits = "".join(ch for ch in path.stem if ch.isdigit())
    return int(digits) if digits else fallback


def run_keyframes_stage(frames_dir: Path, out_path: Path, hash_threshold: int,
                        blur_threshold: float, blur_radii) -> dict:
    """Select keyframes from ``frames_dir/rgb`` (or loose PNGs) into JSON."""
    rgb_dir = frames_dir / "rgb"
    files = _list_pngs(rgb_dir if rgb_dir.is_dir() else frames_dir)
    if not files:
        raise FoodmetryError(f"no PNG frames under {frames_dir}")
    frames = []
    names = {}
    for fallback, path in enumerate(files):
        index = _frame_index(path, fallback)
        names[index] = path.name
        frames.append(FrameRecord(index, images.load_rgb(path)))
    result = select_keyframes(frames, hash_threshold=hash_threshold,
                              blur_radii=blur_radii, blur_threshold=blur_threshold)
    payload = {
        "selected_indices": result.selected_indices,
        "decisions": {str(i): d for i, d in sorted(result.decisions.items())},
        "frame_files": {str(i): names[i] for i in sorted(names)},
        "hash_threshold": hash_threshold,
        "blur_threshold": blur_threshold,
        "blur_radii": list(blur_radii),
    }
    _write_json(out_path, payload)
    return payload


def _scale_to_json(estimate: ScaleEstimate) -> dict:
    return {
        "scale": estimate.scale,
        "method": estimate.method,
        "per_image_medians": estimate.per_image_medians,
    }


def run_scale_stage(manifest: DatasetManifest, obj: ManifestObject,
                    config: PipelineConfig, pred_mesh: TriangleMesh | None) -> dict | None:
    """Estimate the metric scale for one object, if inputs allow.

    Prefers corner projection from an SfM bundle; falls back to the
    depth bounding-box check when no bundle exists; returns None when the
    object carries no scale inputs at all (mesh assumed already metric).
    """
    board = CheckerboardSpec(config.square_length)
    bundle_dir = manifest.resolve(obj.bundle_dir)
    frames_dir = manifest.resolve(obj.frames_dir)
    if bundle_dir is not None:
        bundle = parse_bundle(bundle_dir)
        rgb_dir = frames_dir / "rgb" if frames_dir else None
        pairs = []
        for name in sorted(bundle.cameras):
            candidate = rgb_dir / name if rgb_dir else None
            if candidate is not None and candidate.is_file():
                pairs.append((name, images.load_gray(candidate)))
        if not pairs:
            raise FoodmetryError(
                f"object {obj.id}: bundle lists no image present under {rgb_dir}"
            )
        estimate = estimate_scale_corner_projection(
            bundle, pairs, board, config.corner_intensity_threshold)
        return _scale_to_json(estimate)

    depth_inputs = _find_depth_inputs(frames_dir)
    if depth_inputs is not None and obj.reference_width_cm and config.scale_candidates:
        if pred_mesh is None:
            raise FoodmetryError(f"object {obj.id}: depth scale check needs the predicted mesh")
        logger.info("object %d: no SfM bundle; selecting scale by depth bounding box", obj.id)
        depth, ref_mask, food_mask = depth_inputs
        check = depth_scale_check(depth, ref_mask, food_mask, obj.reference_width_cm)
        closed = pred_mesh
        if boundary_edge_count(closed) != 0:
            closed, _ = fill_holes(closed, max_boundary_edges=10**6)
        candidates = [ScaleEstimate(s, "depth_bbox") for s in config.scale_candidates]
        best = refine_scale(candidates, closed, check.potential_volume)
        payload = _scale_to_json(best)
        payload["potential_volume_cm3"] = check.potential_volume
        return payload
    return None


def _find_depth_inputs(frames_dir: Path | None):
    if frames_dir is None:
        return None
    depth_files = _list_pngs(frames_dir / "depth")
    food_files = _list_pngs(frames_dir / "food_mask")
    ref_files = _list_pngs(frames_dir / "ref_mask")
    if not (depth_files and food_files and ref_files):
        return None
    return (
        images.load_depth(depth_files[0]),
        images.load_mask(ref_files[0]),
        images.load_mask(food_files[0]),
    )


def run_refine_stage(mesh: TriangleMesh, scale: float, config: PipelineConfig) -> TriangleMesh:
    """Clean, smooth, close, and metrically scale a reconstructed mesh."""
    mesh = remove_isolated_pieces(mesh, config.isolated_fraction)
    if config.smooth_iterations > 0 and config.smooth_lambda > 0:
        mesh = laplacian_smooth(
            mesh, SmoothingParams(config.smooth_lambda, config.smooth_iterations))
    mesh, open_loops = fill_holes(mesh, config.fill_holes_max)
    if open_loops and config.cap_base_mode == "auto":
        plane = estimate_support_plane(mesh)
        mesh = cap_base(mesh, plane)
    if scale != 1.0:
        mesh = apply_transform(mesh, SimilarityTransform.pure_scale(scale))
    return mesh


def _process_object(manifest: DatasetManifest, obj: ManifestObject,
                    config: PipelineConfig) -> dict:
    row = _object_row(obj, excluded=obj.id in config.excluded_ids)
    row["n_samples"] = config.n_samples
    row["seed"] = config.seed
    obj_dir = config.out_dir / "objects" / str(obj.id)
    obj_dir.mkdir(parents=True, exist_ok=True)
    try:
        frames_dir = manifest.resolve(obj.frames_dir)
        keyframes_path = obj_dir / "keyframes.json"
        if frames_dir is not None:
            rgb_dir = frames_dir / "rgb"
            has_rgb = bool(_list_pngs(rgb_dir if rgb_dir.is_dir() else frames_dir))
            if keyframes_path.exists():
                logger.info("object %d: keyframes stage skipped (output exists)", obj.id)
            elif not has_rgb:
                logger.info("object %d: no RGB frames; keyframes stage skipped", obj.id)
            else:
                run_keyframes_stage(frames_dir, keyframes_path, config.hash_threshold,
                                    config.blur_threshold, config.blur_radii)

        pred_mesh = None
        if obj.pred_mesh_path is not None:
            pred_mesh = load_object_mesh(manifest, obj, "pred")

        scale_path = obj_dir / "scale.json"
        if scale_path.exists():
            logger.info("object %d: scale stage skipped (scale.json exists)", obj.id)
            scale_info = _read_json(scale_path)
        else:
            scale_info = run_scale_stage(manifest, obj, config, pred_mesh)
            if scale_info is not None:
                _write_json(scale_path, scale_info)
            else:
                logger.info("object %d: no scale inputs; treating mesh as metric", obj.id)
        scale = float(scale_info["scale"]) if scale_info else 1.0

        refined_path = obj_dir / "refined.ply"
        if pred_mesh is not None:
            if refined_path.exists():
                logger.info("object %d: refine stage skipped (refined.ply exists)", obj.id)
            else:
                save_mesh(run_refine_stage(pred_mesh, scale, config), refined_path)
            # Always read the persisted mesh back so fresh and resumed runs
            # score exactly the same (file-quantized) geometry.
            refined = load_mesh(refined_path)

            volume_path = obj_dir / "volume.json"
            if volume_path.exists():
                volume_info = _read_json(volume_path)
            else:
                result = mesh_volume(refined)
                volume_info = {
                    "pred_volume_cm3": result.volume_cm3,
                    "pred_watertight": result.watertight,
                    "boundary_edge_count": result.boundary_edge_count,
                }
                _write_json(volume_path, volume_info)
            row["pred_volume_cm3"] = volume_info["pred_volume_cm3"]
            row["pred_watertight"] = volume_info["pred_watertight"]
        elif obj.pred_volume_cm3 is not None:
            row["pred_volume_cm3"] = float(obj.pred_volume_cm3)

        gt_mesh = None
        if obj.gt_mesh_path is not None:
            gt_mesh = load_object_mesh(manifest, obj, "gt")
            gt_result = mesh_volume(gt_mesh)
            row["gt_volume_cm3"] = gt_result.volume_cm3
            row["gt_watertight"] = gt_result.watertight
        elif obj.gt_volume_cm3 is not None:
            row["gt_volume_cm3"] = float(obj.gt_volume_cm3)

        if row["pred_volume_cm3"] is not None and row["gt_volume_cm3"] is not None:
            row["ape_pct"] = mape([row["pred_volume_cm3"]], [row["gt_volume_cm3"]])

        if gt_mesh is not None and pred_mesh is not None:
            stages_path = obj_dir / "stages.json"
            transform_path = obj_dir / "transform.txt"
            if stages_path.exists() and transform_path.exists():
                logger.info("object %d: align stage skipped (outputs exist)", obj.id)
                stages = _read_json(stages_path)
            else:
                result = align_pipeline(load_mesh(refined_path), gt_mesh,
                                        n_samples=config.n_samples, seed=config.seed)
                save_transform(result.transform, transform_path)
                stages = {
                    "chamfer_before": result.chamfer_before,
                    "chamfer_after_icp": result.chamfer_after_icp,
                    "chamfer_final": result.chamfer_final,
                    "stage_log": result.stage_log,
                    "n_samples": config.n_samples,
                    "seed": config.seed,
                }
                _write_json(stages_path, stages)
            row["chamfer_before"] = stages["chamfer_before"]
            row["chamfer_after_icp"] = stages["chamfer_after_icp"]
            row["chamfer_final"] = stages["chamfer_final"]
            # Paths in report rows are relative to the output directory so
            # reports stay comparable across machines.
            row["transform_path"] = transform_path.relative_to(config.out_dir).as_posix()
    except (FoodmetryError, OSError, ValueError) as exc:
        row["error"] = str(exc)
        logger.warning("object %d failed: %s", obj.id, exc)
    return row


def run_full(manifest: DatasetManifest, config: PipelineConfig) -> EvaluationReport:
    """Run every stage for every object; aggregate into one report.

    Objects are processed by a bounded worker pool; outputs are written
    atomically, so concurrent work never interleaves partial files.
    """
    config.out_dir.mkdir(parents=True, exist_ok=True)
    if config.workers == 1:
        rows = [_process_object(manifest, obj, config) for obj in manifest.objects]
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            rows = list(pool.map(
                lambda obj: _process_object(manifest, obj, config), manifest.objects))
    rows.sort(key=lambda r: r["id"])
    return EvaluationReport(
        phase="full",
        per_object=rows,
        config={
            "excluded_ids": sorted(config.excluded_ids),
            "n_samples": config.n_samples,
            "seed": config.seed,
            "square_length": config.square_length,
            "isolated_fraction": config.isolated_fraction,
            "smooth_lambda": config.smooth_lambda,
            "smooth_iterations": config.smooth_iterations,
            "fill_holes_max": config.fill_holes_max,
            "cap_base_mode": config.cap_base_mode,
        },
    )


def make_config(out_dir, **overrides) -> PipelineConfig:
    base = PipelineConfig(out_dir=Path(out_dir))
    return replace(base, **overrides) if overrides else base
