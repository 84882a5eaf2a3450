"""Structure-from-motion bundle ingestion and pinhole projection.

Reads the de-facto three-file text layout produced by the dominant open
SfM tools (``cameras.txt``, ``images.txt``, ``points3D.txt``) and exposes
the projection queries needed to match detected reference corners to
reconstructed 3D points. Only distortion-free pinhole intrinsics are
supported; bundles are expected to be pre-undistorted upstream.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BundleParseError, NoVisiblePointError, UnsupportedCameraModelError
from .geometry import PointCloud, RigidTransform


@dataclass(frozen=True)
class PinholeCamera:
    """Pinhole intrinsics plus a world-to-camera pose."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose: RigidTransform

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside "
                f"{self.width}x{self.height} image"
            )


@dataclass(frozen=True)
class SfmBundle:
    """Per-image cameras plus the reconstructed point cloud."""

    cameras: dict[str, PinholeCamera]
    cloud: PointCloud

    def __post_init__(self):
        if len(self.cloud) == 0:
            raise ValueError("bundle point cloud is empty")


def quaternion_to_rotation(qw: float, qx: float, qy: float, qz: float) -> np.ndarray:
    """Rotation matrix from a (w, x, y, z) quaternion, normalized first."""
    q = np.array([qw, qx, qy, qz], dtype=np.float64)
    norm = np.linalg.norm(q)
    if norm < 1e-12:
        raise BundleParseError(f"quaternion {q.tolist()} is not normalizable")
    w, x, y, z = q / norm
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def _data_lines(path: Path):
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        lines = fh.readlines()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if line and not line.startswith("#"):
            yield lineno, line


def _parse_cameras(path: Path) -> dict[int, tuple[float, float, float, float, int, int]]:
    cameras = {}
    for lineno, line in _data_lines(path):
        tokens = line.split()
        try:
            cam_id = int(tokens[0])
            model = tokens[1]
            width, height = int(tokens[2]), int(tokens[3])
            params = [float(t) for t in tokens[4:]]
        except (IndexError, ValueError) as exc:
            raise BundleParseError(f"{path}, line {lineno}: bad camera line ({exc})")
        if model == "PINHOLE":
            if len(params) != 4:
                raise BundleParseError(f"{path}, line {lineno}: PINHOLE needs 4 params")
            fx, fy, cx, cy = params
        elif model == "SIMPLE_PINHOLE":
            if len(params) != 3:
                raise BundleParseError(f"{path}, line {lineno}: SIMPLE_PINHOLE needs 3 params")
            fx = fy = params[0]
            cx, cy = params[1], params[2]
        else:
            raise UnsupportedCameraModelError(
                f"{path}, line {lineno}: camera model {model!r} is not supported "
                "(only PINHOLE / SIMPLE_PINHOLE)"
            )
        cameras[cam_id] = (fx, fy, cx, cy, width, height)
    return cameras


def parse_bundle(directory) -> SfmBundle:
    """Parse ``cameras.txt``, ``images.txt`` and ``points3D.txt``.

    Image lines come in pairs: the pose line is followed by a 2D
    observation line, which is consumed and discarded. Point colors and
    tracks are discarded too.
    """
    directory = Path(directory)
    cam_path = directory / "cameras.txt"
    img_path = directory / "images.txt"
    pts_path = directory / "points3D.txt"
    for p in (cam_path, img_path, pts_path):
        if not p.is_file():
            raise BundleParseError(f"missing bundle file {p}")

    intrinsics = _parse_cameras(cam_path)

    cameras: dict[str, PinholeCamera] = {}
    with open(img_path, "r", encoding="utf-8", errors="replace") as fh:
        raw_lines = fh.readlines()
    i = 0
    while i < len(raw_lines):
        lineno, line = i + 1, raw_lines[i].strip()
        if not line or line.startswith("#"):
            i += 1
            continue
        tokens = line.split()
        if len(tokens) < 10:
            raise BundleParseError(f"{img_path}, line {lineno}: image line needs 10 fields")
        try:
            qw, qx, qy, qz = (float(t) for t in tokens[1:5])
            tx, ty, tz = (float(t) for t in tokens[5:8])
            cam_id = int(tokens[8])
        except ValueError as exc:
            raise BundleParseError(f"{img_path}, line {lineno}: bad image line ({exc})")
        name = tokens[9]
        if cam_id not in intrinsics:
            raise BundleParseError(f"{img_path}, line {lineno}: unknown camera id {cam_id}")
        if name in cameras:
            raise BundleParseError(f"{img_path}, line {lineno}: duplicate image name {name!r}")
        try:
            rotation = quaternion_to_rotation(qw, qx, qy, qz)
        except BundleParseError as exc:
            raise BundleParseError(f"{img_path}, line {lineno}: {exc}")
        fx, fy, cx, cy, width, height = intrinsics[cam_id]
        cameras[name] = PinholeCamera(
            fx, fy, cx, cy, width, height,
            RigidTransform(rotation, np.array([tx, ty, tz])),
        )
        i += 2  # the raw line after a pose line holds 2D observations

    points = []
    for lineno, line in _data_lines(pts_path):
        tokens = line.split()
        if len(tokens) < 4:
            raise BundleParseError(f"{pts_path}, line {lineno}: point line needs x y z")
        try:
            points.append((float(tokens[1]), float(tokens[2]), float(tokens[3])))
        except ValueError as exc:
            raise BundleParseError(f"{pts_path}, line {lineno}: bad point line ({exc})")
    if not points:
        raise BundleParseError(f"{pts_path}: bundle has no 3D points")

    return SfmBundle(cameras, PointCloud(np.asarray(points, dtype=np.float64)))


def project(cam: PinholeCamera, point) -> tuple[float, float] | None:
    """Project one world point to pixel (u, v); None if behind the camera."""
    q = cam.pose.apply(np.asarray(point, dtype=np.float64).reshape(1, 3))[0]
    if q[2] <= 0.0:
        return None
    return (cam.fx * q[0] / q[2] + cam.cx, cam.fy * q[1] / q[2] + cam.cy)


def project_points(cam: PinholeCamera, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection.

    Returns (uv, in_front): uv is (n, 2) with rows undefined where
    in_front is False.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    q = cam.pose.apply(pts)
    in_front = q[:, 2] > 0.0
    z = np.where(in_front, q[:, 2], 1.0)
    uv = np.stack([cam.fx * q[:, 0] / z + cam.cx,
                   cam.fy * q[:, 1] / z + cam.cy], axis=1)
    return uv, in_front


def nearest_projected_point(cam: PinholeCamera, cloud: PointCloud, pixel) -> np.ndarray:
    """Cloud point whose projection is pixel-closest to ``pixel``.

    Behind-camera points are excluded. Ties break to the lowest point
    index. Raises when no point projects in front of the camera.
    """
    idx = nearest_projected_index(cam, cloud, pixel)
    return cloud.points[idx].copy()


def nearest_projected_index(cam: PinholeCamera, cloud: PointCloud, pixel) -> int:
    if len(cloud) == 0:
        raise ValueError("cloud is empty")
    uv, in_front = project_points(cam, cloud.points)
    if not in_front.any():
        raise NoVisiblePointError("every cloud point projects behind the camera")
    d2 = ((uv - np.asarray(pixel, dtype=np.float64)) ** 2).sum(axis=1)
    d2[~in_front] = np.inf
    return int(np.argmin(d2))
