"""Core geometric types: meshes, point clouds, transforms, boxes.

Conventions used throughout the toolkit:

* coordinates are float64 and in meters unless a function says otherwise,
* points are row vectors, so arrays of points have shape (n, 3),
* all types are treated as immutable after construction; operations
  return new objects and are safe to call from multiple threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometryError, MeshStructureError

# A single 3D point / direction: float64 array of shape (3,).
Vec3 = np.ndarray

_ORTHONORMAL_TOL = 1e-9


def _as_points(obj) -> np.ndarray:
    """Coerce supported point containers to an (n, 3) float64 array."""
    if isinstance(obj, TriangleMesh):
        return obj.vertices
    if isinstance(obj, PointCloud):
        return obj.points
    pts = np.asarray(obj, dtype=np.float64)
    if pts.ndim == 1 and pts.size == 3:
        pts = pts.reshape(1, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) point array, got shape {pts.shape}")
    return pts


@dataclass(frozen=True)
class PointCloud:
    """Unordered set of 3D points, shape (n, 3)."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (n, 3), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise ValueError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle surface.

    ``vertices`` is (n, 3) float64, ``faces`` is (m, 3) integer indices
    into the vertex array, ``colors`` optionally carries per-vertex RGB
    as (n, 3) uint8.
    """

    vertices: np.ndarray
    faces: np.ndarray
    colors: np.ndarray | None = None

    def __post_init__(self):
        verts = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        if verts.size == 0:
            verts = verts.reshape(0, 3)
        faces = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64))
        if faces.size == 0:
            faces = faces.reshape(0, 3)
        if verts.ndim != 2 or verts.shape[1] != 3:
            raise MeshStructureError(f"vertices must be (n, 3), got {verts.shape}")
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise MeshStructureError(f"faces must be (m, 3), got {faces.shape}")
        if not np.isfinite(verts).all():
            raise MeshStructureError("mesh has non-finite vertex coordinates")
        if faces.size:
            if faces.min() < 0 or faces.max() >= len(verts):
                raise MeshStructureError(
                    f"face index out of range [0, {len(verts)}) "
                    f"(min {faces.min()}, max {faces.max()})"
                )
            fully_degenerate = (faces[:, 0] == faces[:, 1]) & (faces[:, 1] == faces[:, 2])
            if fully_degenerate.any():
                raise MeshStructureError(
                    f"face {int(np.flatnonzero(fully_degenerate)[0])} repeats a "
                    "single vertex index three times"
                )
        colors = self.colors
        if colors is not None:
            colors = np.ascontiguousarray(np.asarray(colors, dtype=np.uint8))
            if colors.shape != (len(verts), 3):
                raise MeshStructureError(
                    f"colors must be ({len(verts)}, 3), got {colors.shape}"
                )
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "faces", faces)
        object.__setattr__(self, "colors", colors)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]


@dataclass(frozen=True)
class RigidTransform:
    """Rotation plus translation, applied as ``p -> R @ p + t``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.ascontiguousarray(np.asarray(self.rotation, dtype=np.float64))
        tra = np.ascontiguousarray(np.asarray(self.translation, dtype=np.float64)).reshape(3)
        if rot.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {rot.shape}")
        if not np.isfinite(rot).all() or not np.isfinite(tra).all():
            raise ValueError("transform contains non-finite values")
        if np.abs(rot @ rot.T - np.eye(3)).max() > _ORTHONORMAL_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > _ORTHONORMAL_TOL:
            raise ValueError("rotation determinant is not +1 (reflection?)")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tra)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = _as_points(points)
        return pts @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Return the transform equivalent to applying ``other`` first."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)


@dataclass(frozen=True)
class SimilarityTransform:
    """Uniform scale followed by a rigid motion: ``p -> s * (R @ p) + t``."""

    scale: float
    rigid: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        s = float(self.scale)
        if not np.isfinite(s) or s <= 0:
            raise ValueError(f"scale must be a positive finite number, got {s}")
        object.__setattr__(self, "scale", s)

    @staticmethod
    def identity() -> "SimilarityTransform":
        return SimilarityTransform(1.0, RigidTransform.identity())

    @staticmethod
    def pure_scale(scale: float) -> "SimilarityTransform":
        return SimilarityTransform(scale, RigidTransform.identity())

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = _as_points(points)
        return self.scale * (pts @ self.rigid.rotation.T) + self.rigid.translation

    def matrix(self) -> np.ndarray:
        """Homogeneous 4x4 matrix (row-major) with scale folded into R."""
        m = np.eye(4)
        m[:3, :3] = self.scale * self.rigid.rotation
        m[:3, 3] = self.rigid.translation
        return m


@dataclass(frozen=True)
class AxisAlignedBox:
    """Componentwise min/max corner pair."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=np.float64).reshape(3)
        hi = np.asarray(self.max, dtype=np.float64).reshape(3)
        if (lo > hi).any():
            raise ValueError("box min exceeds max")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.max - self.min))

    def contains(self, points: np.ndarray, tol: float = 0.0) -> np.ndarray:
        pts = _as_points(points)
        return ((pts >= self.min - tol) & (pts <= self.max + tol)).all(axis=1)


def bounding_box(obj) -> AxisAlignedBox:
    """Tight axis-aligned bounding box of a mesh, cloud or point array."""
    pts = _as_points(obj)
    if pts.shape[0] == 0:
        raise ValueError("cannot bound an empty point set")
    return AxisAlignedBox(pts.min(axis=0), pts.max(axis=0))


def diameter(obj) -> float:
    """Length of the bounding-box diagonal of ``obj``."""
    if isinstance(obj, AxisAlignedBox):
        return obj.diagonal
    return bounding_box(obj).diagonal


def apply_transform(mesh: TriangleMesh, transform: SimilarityTransform | RigidTransform) -> TriangleMesh:
    """Transform every vertex; connectivity and colors are unchanged."""
    if isinstance(transform, RigidTransform):
        transform = SimilarityTransform(1.0, transform)
    return TriangleMesh(transform.apply(mesh.vertices), mesh.faces, mesh.colors)


def connected_components(mesh: TriangleMesh) -> list[TriangleMesh]:
    """Split a mesh into vertex-connected face groups.

    Faces are partitioned by shared vertices; each returned component has
    its vertices re-indexed compactly. Vertices referenced by no face do
    not appear in any component. The union of component face sets equals
    the input face set.
    """
    if mesh.n_faces == 0:
        return []
    parent = np.arange(mesh.n_vertices)

    def find(i: int) -> int:
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    for a, b, c in mesh.faces:
        ra, rb, rc = find(a), find(b), find(c)
        parent[rb] = ra
        parent[find(rc)] = ra

    face_root = np.array([find(f[0]) for f in mesh.faces])
    components: list[TriangleMesh] = []
    for root in sorted(set(face_root.tolist()), key=lambda r: int(np.flatnonzero(face_root == r)[0])):
        fsel = mesh.faces[face_root == root]
        used = np.unique(fsel)
        remap = np.full(mesh.n_vertices, -1, dtype=np.int64)
        remap[used] = np.arange(len(used))
        colors = mesh.colors[used] if mesh.colors is not None else None
        components.append(TriangleMesh(mesh.vertices[used], remap[fsel], colors))
    return components


def merge_meshes(meshes: list[TriangleMesh]) -> TriangleMesh:
    """Concatenate meshes into one, offsetting face indices."""
    if not meshes:
        raise ValueError("cannot merge an empty mesh list")
    verts, faces, colors, offset = [], [], [], 0
    keep_colors = all(m.colors is not None for m in meshes)
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        if keep_colors:
            colors.append(m.colors)
        offset += m.n_vertices
    return TriangleMesh(
        np.vstack(verts),
        np.vstack(faces),
        np.vstack(colors) if keep_colors else None,
    )


def triangle_areas(mesh: TriangleMesh) -> np.ndarray:
    """Area of each face, shape (m,)."""
    v0 = mesh.vertices[mesh.faces[:, 0]]
    v1 = mesh.vertices[mesh.faces[:, 1]]
    v2 = mesh.vertices[mesh.faces[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(v1 - v0, v2 - v0), axis=1)


def sample_surface(mesh: TriangleMesh, n: int, seed: int) -> PointCloud:
    """Draw ``n`` points area-uniformly from the mesh surface.

    Faces are chosen with probability proportional to area, then a point
    is placed uniformly inside each chosen triangle via the reflected
    barycentric trick. Deterministic for a fixed seed.
    """
    if n < 1:
        raise ValueError(f"sample count must be >= 1, got {n}")
    if mesh.n_faces == 0:
        raise DegenerateGeometryError("mesh has no faces to sample")
    areas = triangle_areas(mesh)
    total = areas.sum()
    if total <= 0.0:
        raise DegenerateGeometryError("all faces are degenerate (zero area)")
    rng = np.random.default_rng(seed)
    face_idx = rng.choice(mesh.n_faces, size=n, p=areas / total)
    uv = rng.random((n, 2))
    flip = uv.sum(axis=1) > 1.0
    uv[flip] = 1.0 - uv[flip]
    a = mesh.vertices[mesh.faces[face_idx, 0]]
    b = mesh.vertices[mesh.faces[face_idx, 1]]
    c = mesh.vertices[mesh.faces[face_idx, 2]]
    pts = a + uv[:, :1] * (b - a) + uv[:, 1:] * (c - a)
    return PointCloud(pts)
