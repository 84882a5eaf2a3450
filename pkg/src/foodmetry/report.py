"""Dataset manifests, per-phase evaluation runs, and report output.

A report is JSON (schema-versioned, deterministic byte-for-byte for
identical inputs and seeds) accompanied by a CSV table of the per-object
rows and bar-chart PNGs rendered next to it. Volume scoring and shape
scoring are kept as separate numbers; no combined scalar is invented.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .align import align_pipeline, save_transform
from .errors import FoodmetryError
from .geometry import RigidTransform, TriangleMesh, apply_transform
from .meshio import load_mesh
from .metrics import mape, mesh_volume

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DIFFICULTIES = ("easy", "medium", "hard")
UP_AXES = ("+z", "-z", "+y", "-y", "+x", "-x")

# Objects dropped from every aggregate unless overridden (data-quality
# exclusions in the reference evaluation).
DEFAULT_EXCLUDED_IDS = frozenset({12, 15})


@dataclass(frozen=True)
class ManifestObject:
    id: int
    label: str
    difficulty: str
    frames_dir: str | None = None
    bundle_dir: str | None = None
    gt_mesh_path: str | None = None
    pred_mesh_path: str | None = None
    up_axis: str = "+z"
    reference_width_cm: float | None = None
    pred_volume_cm3: float | None = None
    gt_volume_cm3: float | None = None

    def __post_init__(self):
        if self.difficulty not in DIFFICULTIES:
            raise ValueError(
                f"object {self.id}: difficulty must be one of {DIFFICULTIES}, "
                f"got {self.difficulty!r}"
            )
        if self.up_axis not in UP_AXES:
            raise ValueError(f"object {self.id}: unknown up axis {self.up_axis!r}")


@dataclass(frozen=True)
class DatasetManifest:
    objects: tuple[ManifestObject, ...]
    base_dir: Path = Path(".")

    def __post_init__(self):
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise ValueError("manifest object ids must be unique")
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "base_dir", Path(self.base_dir))

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict) or "objects" not in data:
            raise ValueError(f"{path}: manifest must be an object with an 'objects' list")
        objects = [ManifestObject(**entry) for entry in data["objects"]]
        return cls(tuple(objects), base_dir=path.parent)

    def resolve(self, relative: str | None) -> Path | None:
        if relative is None:
            return None
        p = Path(relative)
        return p if p.is_absolute() else self.base_dir / p


def up_axis_rotation(up_axis: str) -> RigidTransform:
    """Rotation taking the declared up axis onto +z."""
    axis_vectors = {
        "+z": (0, 0, 1), "-z": (0, 0, -1),
        "+y": (0, 1, 0), "-y": (0, -1, 0),
        "+x": (1, 0, 0), "-x": (-1, 0, 0),
    }
    up = np.asarray(axis_vectors[up_axis], dtype=np.float64)
    helper = np.array([0.0, 0.0, 1.0]) if abs(up[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    v1 = helper - (helper @ up) * up
    v1 /= np.linalg.norm(v1)
    v2 = np.cross(up, v1)
    return RigidTransform(np.stack([v1, v2, up]), np.zeros(3))


def load_object_mesh(manifest: DatasetManifest, obj: ManifestObject, which: str,
                     search_dir: Path | None = None) -> TriangleMesh:
    """Load an object's predicted or ground-truth mesh, rotated to +z up.

    The manifest path wins when present (resolved against ``search_dir``
    when relative and given, else against the manifest directory).
    Otherwise ``<id>.obj`` / ``<id>.ply`` are searched in ``search_dir``.
    """
    declared = obj.pred_mesh_path if which == "pred" else obj.gt_mesh_path
    candidates: list[Path] = []
    if declared is not None:
        p = Path(declared)
        if p.is_absolute():
            candidates.append(p)
        else:
            if search_dir is not None:
                candidates.append(search_dir / p)
            candidates.append(manifest.base_dir / p)
    elif search_dir is not None:
        candidates += [search_dir / f"{obj.id}{ext}" for ext in (".obj", ".ply")]
    for candidate in candidates:
        if candidate.is_file():
            mesh = load_mesh(candidate)
            if obj.up_axis != "+z":
                mesh = apply_transform(mesh, up_axis_rotation(obj.up_axis))
            return mesh
    raise FoodmetryError(
        f"object {obj.id}: no {which} mesh found "
        f"(tried {[str(c) for c in candidates] or 'nothing'})"
    )


@dataclass
class EvaluationReport:
    """Per-object rows plus aggregate scores."""

    phase: str
    per_object: list[dict]
    config: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    @property
    def aggregate(self) -> dict:
        return compute_aggregate(self.per_object)

    @property
    def failed_ids(self) -> list[int]:
        return [row["id"] for row in self.per_object if row.get("error")]

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "phase": self.phase,
            "config": self.config,
            "per_object": self.per_object,
            "aggregate": self.aggregate,
        }


def compute_aggregate(per_object: list[dict]) -> dict:
    """Recompute aggregate scores from per-object rows.

    Rows marked excluded or carrying an error never contribute. The MAPE
    aggregates rows with an APE; Chamfer sums/means aggregate rows with a
    final Chamfer value.
    """
    scored = [r for r in per_object if not r.get("excluded") and not r.get("error")]
    apes = [r["ape_pct"] for r in scored if r.get("ape_pct") is not None]
    chamfers = [r["chamfer_final"] for r in scored if r.get("chamfer_final") is not None]
    aggregate: dict = {
        "n_volume": len(apes),
        "n_chamfer": len(chamfers),
        "excluded_ids": sorted(r["id"] for r in per_object if r.get("excluded")),
        "failed_ids": sorted(r["id"] for r in per_object if r.get("error")),
        "mape_pct": float(np.mean(apes)) if apes else None,
        "chamfer_sum": float(np.sum(chamfers)) if chamfers else None,
        "chamfer_mean": float(np.mean(chamfers)) if chamfers else None,
    }
    return aggregate


def validate_report(report: dict) -> list[str]:
    """Check that a report's aggregate is recomputable from its rows.

    Returns a list of human-readable problems; empty means consistent.
    """
    problems = []
    if report.get("schema_version") != SCHEMA_VERSION:
        problems.append(f"unsupported schema_version {report.get('schema_version')}")
    expected = compute_aggregate(report.get("per_object", []))
    stored = report.get("aggregate", {})
    for key, want in expected.items():
        got = stored.get(key)
        if isinstance(want, float) and isinstance(got, (int, float)):
            if abs(got - want) > 1e-12 * max(1.0, abs(want)):
                problems.append(f"aggregate.{key} = {got}, recomputed {want}")
        elif got != want:
            problems.append(f"aggregate.{key} = {got!r}, recomputed {want!r}")
    for row in report.get("per_object", []):
        ape = row.get("ape_pct")
        pred, gt = row.get("pred_volume_cm3"), row.get("gt_volume_cm3")
        if ape is not None and pred is not None and gt is not None:
            recomputed = abs(gt - pred) / gt * 100.0
            if abs(ape - recomputed) > 1e-9:
                problems.append(f"object {row.get('id')}: ape_pct {ape} != {recomputed}")
    return problems


def _object_row(obj: ManifestObject, excluded: bool) -> dict:
    return {
        "id": obj.id,
        "label": obj.label,
        "difficulty": obj.difficulty,
        "excluded": excluded,
        "error": None,
        "pred_volume_cm3": None,
        "gt_volume_cm3": None,
        "ape_pct": None,
        "pred_watertight": None,
        "gt_watertight": None,
        "chamfer_before": None,
        "chamfer_after_icp": None,
        "chamfer_final": None,
        "transform_path": None,
        "n_samples": None,
        "seed": None,
    }


def _volume_of(manifest, obj, which, search_dir, row) -> float | None:
    direct = obj.pred_volume_cm3 if which == "pred" else obj.gt_volume_cm3
    if direct is not None:
        return float(direct)
    mesh = load_object_mesh(manifest, obj, which, search_dir)
    result = mesh_volume(mesh)
    row[f"{which}_watertight"] = result.watertight
    if not result.watertight:
        logger.warning("object %d: %s mesh is not watertight (%d boundary edges); "
                       "volume is approximate", obj.id, which, result.boundary_edge_count)
    return result.volume_cm3


def run_phase1(manifest: DatasetManifest, excluded_ids=DEFAULT_EXCLUDED_IDS,
               pred_dir: Path | None = None, gt_dir: Path | None = None) -> EvaluationReport:
    """Volume scoring: per-object APE plus aggregate MAPE.

    Volumes come from the manifest when given directly, otherwise from
    the object meshes. Objects that fail to produce both volumes get an
    error row, a warning, and no say in the aggregate.
    """
    rows = []
    for obj in manifest.objects:
        row = _object_row(obj, excluded=obj.id in excluded_ids)
        try:
            pred = _volume_of(manifest, obj, "pred", pred_dir, row)
            gt = _volume_of(manifest, obj, "gt", gt_dir, row)
            row["pred_volume_cm3"] = pred
            row["gt_volume_cm3"] = gt
            row["ape_pct"] = mape([pred], [gt])
        except (FoodmetryError, OSError, ValueError) as exc:
            row["error"] = str(exc)
            logger.warning("object %d excluded from aggregate: %s", obj.id, exc)
        rows.append(row)
    return EvaluationReport(
        phase="phase1",
        per_object=rows,
        config={"excluded_ids": sorted(excluded_ids)},
    )


def run_phase2(manifest: DatasetManifest, n_samples: int = 50_000, seed: int = 7,
               excluded_ids=DEFAULT_EXCLUDED_IDS, pred_dir: Path | None = None,
               gt_dir: Path | None = None, transform_dir: Path | None = None) -> EvaluationReport:
    """Shape scoring: align each prediction and report Chamfer values.

    Rows carry the Chamfer before any transform and after the full
    alignment, mirroring with/without-transform scoring. Transforms are
    written to ``transform_dir`` when given.
    """
    rows = []
    for obj in manifest.objects:
        row = _object_row(obj, excluded=obj.id in excluded_ids)
        row["n_samples"] = n_samples
        row["seed"] = seed
        has_pred = obj.pred_mesh_path is not None or pred_dir is not None
        has_gt = obj.gt_mesh_path is not None or gt_dir is not None
        if not (has_pred and has_gt):
            # Volumes-only objects are legitimate; they just carry no shape score.
            logger.info("object %d: no mesh source declared; skipped in shape scoring",
                        obj.id)
            rows.append(row)
            continue
        try:
            pred = load_object_mesh(manifest, obj, "pred", pred_dir)
            gt = load_object_mesh(manifest, obj, "gt", gt_dir)
            result = align_pipeline(pred, gt, n_samples=n_samples, seed=seed)
            row["chamfer_before"] = result.chamfer_before
            row["chamfer_after_icp"] = result.chamfer_after_icp
            row["chamfer_final"] = result.chamfer_final
            if transform_dir is not None:
                transform_dir.mkdir(parents=True, exist_ok=True)
                out = transform_dir / f"{obj.id}.txt"
                save_transform(result.transform, out)
                row["transform_path"] = f"{transform_dir.name}/{obj.id}.txt"
        except (FoodmetryError, OSError, ValueError) as exc:
            row["error"] = str(exc)
            logger.warning("object %d excluded from aggregate: %s", obj.id, exc)
        rows.append(row)
    return EvaluationReport(
        phase="phase2",
        per_object=rows,
        config={"excluded_ids": sorted(excluded_ids), "n_samples": n_samples, "seed": seed},
    )


def merge_reports(volume: EvaluationReport, shape: EvaluationReport) -> EvaluationReport:
    """Combine phase-1 and phase-2 rows for the same manifest."""
    by_id = {row["id"]: dict(row) for row in volume.per_object}
    for row in shape.per_object:
        merged = by_id.setdefault(row["id"], dict(row))
        for key, value in row.items():
            if merged.get(key) is None and value is not None:
                merged[key] = value
        if row.get("error") and not merged.get("error"):
            merged["error"] = row["error"]
    rows = [by_id[i] for i in sorted(by_id)]
    config = dict(volume.config)
    config.update(shape.config)
    return EvaluationReport(phase="both", per_object=rows, config=config)


CSV_COLUMNS = [
    "id", "label", "difficulty", "excluded", "error",
    "pred_volume_cm3", "gt_volume_cm3", "ape_pct",
    "pred_watertight", "gt_watertight",
    "chamfer_before", "chamfer_after_icp", "chamfer_final",
    "transform_path", "n_samples", "seed",
]


def atomic_write_text(path: Path, text: str) -> None:
    """Write via a temp file and rename, so readers never see partials."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def report_json_text(report: EvaluationReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def write_report(report: EvaluationReport, json_path, figures: bool = True) -> list[Path]:
    """Write report.json plus a CSV table and figures next to it.

    Returns every path written. The CSV shares the JSON's stem; figures
    land in a ``<stem>_figures`` directory.
    """
    json_path = Path(json_path)
    written = [json_path]
    atomic_write_text(json_path, report_json_text(report))

    csv_path = json_path.with_suffix(".csv")
    lines = []
    for row in report.per_object:
        lines.append({col: row.get(col) for col in CSV_COLUMNS})
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        writer.writerows(lines)
    written.append(csv_path)

    if figures:
        from .figures import render_report_figures  # matplotlib import deferred

        fig_dir = json_path.parent / f"{json_path.stem}_figures"
        written += render_report_figures(report.to_dict(), fig_dir)
    return written
