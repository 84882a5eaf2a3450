"""Metric scale recovery from a checkerboard reference.

Three routes to a meters-per-model-unit factor:

* block lengths: average measured square edge lengths against the known
  physical square size,
* corner projection: detect board corners in images, match each to the
  nearest projected SfM cloud point, take the median nearest-corner
  distance per image, and divide the physical square size by the mean of
  those medians,
* depth bounding box: derive a physical bounding-box volume from an
  overhead depth map plus masks and pick the scale candidate whose scaled
  mesh volume lands closest to it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError

from .errors import ScaleEstimationError
from .geometry import PointCloud, TriangleMesh
from .metrics import boundary_edge_count, signed_volume
from .sfm import PinholeCamera, SfmBundle, project_points

logger = logging.getLogger(__name__)

# Physical edge length of one checkerboard square, in meters.
DEFAULT_SQUARE_LENGTH = 0.012

_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


@dataclass(frozen=True)
class CheckerboardSpec:
    """Physical reference pattern: square edge length in meters."""

    square_length: float = DEFAULT_SQUARE_LENGTH

    def __post_init__(self):
        if self.square_length <= 0:
            raise ValueError(f"square length must be positive, got {self.square_length}")


@dataclass(frozen=True)
class ScaleEstimate:
    """Meters per model unit plus how it was obtained."""

    scale: float
    method: str  # "block" | "corner_projection" | "depth_bbox"
    per_image_medians: list[float] | None = None

    def __post_init__(self):
        if self.scale <= 0 or not np.isfinite(self.scale):
            raise ValueError(f"scale must be positive and finite, got {self.scale}")
        if (self.method == "corner_projection") != (self.per_image_medians is not None):
            raise ValueError("per-image medians are recorded exactly for corner_projection")


@dataclass(frozen=True)
class DepthScaleCheck:
    """Physical food bounding-box volume derived from depth and masks.

    ``ppu`` is physical length per pixel (cm/px), ``f_w``/``f_l`` the food
    mask extent in pixels, ``f_h`` the food height in cm, ``d_r``/``d_f``
    the mean reference/food depths in meters.
    """

    ppu: float
    f_w: float
    f_l: float
    f_h: float
    d_r: float
    d_f: float
    potential_volume: float

    def __post_init__(self):
        for name in ("ppu", "f_w", "f_l", "f_h", "d_r", "d_f", "potential_volume"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        expected = (self.f_w * self.ppu) * (self.f_l * self.ppu) * self.f_h
        if abs(self.potential_volume - expected) > 1e-9:
            raise ValueError("potential_volume disagrees with (f_w·ppu)(f_l·ppu)·f_h")


def detect_corners(img: np.ndarray, intensity_threshold: int = 240,
                   side_tolerance: float = 0.25, merge_radius: float = 3.0) -> np.ndarray:
    """Find checkerboard square corners in a gray image.

    The image is binarized at ``intensity_threshold`` (>= threshold is
    white) and split into 4-connected white regions, so board squares
    that touch only diagonally stay separate. Each region boundary is
    reduced to its convex hull, the hull is thinned to its 4 dominant
    vertices, and regions are kept only when they look like board squares:
    the four side lengths agree within ``side_tolerance`` and the region
    fills most of its quad. Corners of adjacent squares that land within
    ``merge_radius`` pixels are merged to their centroid, which puts each
    shared corner on the true grid junction.

    Returns an (n, 2) float array of (x, y) pixel coordinates, sorted by
    (y, x); empty when nothing qualifies.
    """
    img = np.asarray(img)
    if img.size == 0:
        raise ValueError("cannot detect corners in an empty image")
    if not 0 <= intensity_threshold <= 255:
        raise ValueError(f"intensity threshold must be in [0, 255], got {intensity_threshold}")
    binary = img >= intensity_threshold
    labels, n_regions = ndimage.label(binary, structure=_FOUR_CONNECTED)
    corners: list[np.ndarray] = []
    for region in range(1, n_regions + 1):
        rows, cols = np.nonzero(labels == region)
        if rows.size < 9:  # too small to carry a measurable square
            continue
        pts = np.stack([cols, rows], axis=1).astype(np.float64)  # (x, y)
        try:
            hull = ConvexHull(pts)
        except QhullError:
            continue  # collinear region
        quad = _thin_to_quad(pts[hull.vertices])
        if quad is None:
            continue
        sides = np.linalg.norm(np.roll(quad, -1, axis=0) - quad, axis=1)
        if sides.min() < 2.0 or sides.max() > (1.0 + side_tolerance) * sides.min():
            continue
        if rows.size < 0.8 * _polygon_area(quad):
            continue  # region does not fill its hull: not a solid square
        corners.extend(quad)
    if not corners:
        return np.zeros((0, 2))
    merged = _merge_close(np.asarray(corners), merge_radius)
    order = np.lexsort((merged[:, 0], merged[:, 1]))
    return merged[order]


def _thin_to_quad(hull_pts: np.ndarray) -> np.ndarray | None:
    """Drop hull vertices, least-area-loss first, until 4 remain."""
    pts = list(hull_pts)
    if len(pts) < 4:
        return None
    while len(pts) > 4:
        n = len(pts)
        losses = [
            _triangle_area(pts[(i - 1) % n], pts[i], pts[(i + 1) % n])
            for i in range(n)
        ]
        del pts[int(np.argmin(losses))]
    return np.asarray(pts)


def _triangle_area(a, b, c) -> float:
    return 0.5 * abs((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))


def _polygon_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _merge_close(pts: np.ndarray, radius: float) -> np.ndarray:
    n = len(pts)
    parent = np.arange(n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    for i, j in zip(*np.nonzero(d2 <= radius * radius)):
        if i < j:
            parent[find(j)] = find(i)
    roots = np.array([find(i) for i in range(n)])
    return np.stack([pts[roots == r].mean(axis=0) for r in np.unique(roots)])


def pairwise_min_median(points) -> float:
    """Median over points of the distance to each point's nearest other point.

    Builds the full pairwise distance matrix, takes each row's minimum
    excluding the diagonal, and returns the median of those minima (an
    even count averages the two central values).
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise ValueError("need at least 2 points")
    diff = pts[:, None, :] - pts[None, :, :]
    d = np.sqrt((diff**2).sum(axis=2))
    np.fill_diagonal(d, np.inf)
    return float(np.median(d.min(axis=1)))


def estimate_scale_corner_projection(
    bundle: SfmBundle,
    images,
    board: CheckerboardSpec = CheckerboardSpec(),
    intensity_threshold: int = 240,
) -> ScaleEstimate:
    """Corner-projection scale estimate from an SfM bundle.

    ``images`` is a sequence of (name, gray image) pairs; every name must
    resolve to a bundle camera. Per image: detect board corners, match
    each corner to the nearest projected cloud point, reduce the matched
    3D points with :func:`pairwise_min_median`, then divide the physical
    square length by the mean of the per-image medians.
    """
    corner_counts: dict[str, int] = {}
    medians: list[float] = []
    for name, gray in images:
        if name not in bundle.cameras:
            raise ValueError(f"image {name!r} has no camera in the bundle")
        cam = bundle.cameras[name]
        corners = detect_corners(gray, intensity_threshold)
        corner_counts[name] = len(corners)
        if len(corners) < 2:
            continue
        matched = _match_corners(cam, bundle.cloud, corners)
        if len(matched) < 2:
            corner_counts[name] = len(matched)
            continue
        medians.append(pairwise_min_median(matched))
    if not medians:
        raise ScaleEstimationError(corner_counts)
    scale = board.square_length / float(np.mean(medians))
    return ScaleEstimate(scale, "corner_projection", per_image_medians=medians)


def _match_corners(cam: PinholeCamera, cloud: PointCloud, corners: np.ndarray) -> np.ndarray:
    """Nearest projected cloud point per corner, duplicates dropped.

    Two corners snapping to the same cloud point would contribute a
    spurious zero distance, so repeated matches keep only the first.
    """
    uv, in_front = project_points(cam, cloud.points)
    if not in_front.any():
        return np.zeros((0, 3))
    seen: set[int] = set()
    matched = []
    for corner in corners:
        d2 = ((uv - corner) ** 2).sum(axis=1)
        d2[~in_front] = np.inf
        idx = int(np.argmin(d2))
        if idx not in seen:
            seen.add(idx)
            matched.append(cloud.points[idx])
    return np.asarray(matched)


def estimate_scale_block_lengths(block_lengths, board: CheckerboardSpec = CheckerboardSpec()) -> ScaleEstimate:
    """Scale from measured square edge lengths in model units."""
    lengths = np.asarray(block_lengths, dtype=np.float64).ravel()
    if lengths.size == 0:
        raise ValueError("need at least one block length")
    if (lengths <= 0).any():
        raise ValueError("block lengths must all be positive")
    return ScaleEstimate(board.square_length / float(lengths.mean()), "block")


def _mask_col_row_extent(mask: np.ndarray) -> tuple[int, int]:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("mask is empty")
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1)


def ppu_from_reference(ref_mask: np.ndarray, ref_physical_width_cm: float) -> float:
    """Physical length per pixel (cm/px) from a reference object mask.

    Width is the horizontal (column) extent of the mask's tight bounding
    box.
    """
    if ref_physical_width_cm <= 0:
        raise ValueError("reference width must be positive")
    width_px, _ = _mask_col_row_extent(ref_mask)
    return ref_physical_width_cm / width_px


def mask_extent(mask: np.ndarray) -> tuple[int, int]:
    """Tight bounding-box side lengths in pixels, returned width <= length."""
    a, b = _mask_col_row_extent(mask)
    return (a, b) if a <= b else (b, a)


def food_height(depth: np.ndarray, ref_mask: np.ndarray, food_mask: np.ndarray) -> float:
    """|mean reference depth - mean food depth| in meters, zeros ignored."""
    depth = np.asarray(depth, dtype=np.float64)
    valid = depth > 0
    d_r = _masked_mean(depth, np.asarray(ref_mask, bool) & valid, "reference")
    d_f = _masked_mean(depth, np.asarray(food_mask, bool) & valid, "food")
    return abs(d_r - d_f)


def _masked_mean(depth: np.ndarray, mask: np.ndarray, label: str) -> float:
    if not mask.any():
        raise ValueError(f"no valid depth readings under the {label} mask")
    return float(depth[mask].mean())


def bbox_volume(f_w: float, f_l: float, f_h: float, ppu: float) -> float:
    """Physical bounding-box volume in cm³.

    ``f_w`` and ``f_l`` are pixel extents converted through ``ppu``
    (cm/px); ``f_h`` is already physical, in cm.
    """
    if min(f_w, f_l, f_h, ppu) <= 0:
        raise ValueError("all bounding-box inputs must be positive")
    return (f_w * ppu) * (f_l * ppu) * f_h


def depth_scale_check(depth: np.ndarray, ref_mask: np.ndarray, food_mask: np.ndarray,
                      ref_physical_width_cm: float) -> DepthScaleCheck:
    """Assemble the depth-based bounding-box volume from raw rasters."""
    ppu = ppu_from_reference(ref_mask, ref_physical_width_cm)
    f_w, f_l = mask_extent(food_mask)
    f_h = food_height(depth, ref_mask, food_mask) * 100.0  # meters to cm
    d_r = _masked_mean(np.asarray(depth, np.float64),
                       np.asarray(ref_mask, bool) & (np.asarray(depth) > 0), "reference")
    d_f = _masked_mean(np.asarray(depth, np.float64),
                       np.asarray(food_mask, bool) & (np.asarray(depth) > 0), "food")
    return DepthScaleCheck(
        ppu=ppu, f_w=f_w, f_l=f_l, f_h=f_h, d_r=d_r, d_f=d_f,
        potential_volume=bbox_volume(f_w, f_l, f_h, ppu),
    )


def refine_scale(candidates, mesh: TriangleMesh, target_volume_cm3: float) -> ScaleEstimate:
    """Pick the scale candidate whose scaled mesh volume best matches a target.

    Volume scales cubically, so candidate s maps the unitless mesh volume
    V to V·s³ (in m³, then cm³). Exact ties go to the smaller scale.
    Requires a closed mesh; an open mesh has no trustworthy volume.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValueError("need at least one scale candidate")
    if target_volume_cm3 <= 0:
        raise ValueError("target volume must be positive")
    if boundary_edge_count(mesh) != 0:
        raise ValueError("refine_scale needs a closed mesh to compute volumes")
    model_volume = abs(signed_volume(mesh))
    ranked = sorted(candidates, key=lambda c: c.scale)
    errors = [abs(model_volume * c.scale**3 * 1e6 - target_volume_cm3) for c in ranked]
    best = ranked[int(np.argmin(errors))]
    logger.debug("refine_scale picked %.6g (method %s) against target %.3f cm³",
                 best.scale, best.method, target_volume_cm3)
    return best
