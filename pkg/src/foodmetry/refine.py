"""Mesh post-processing: debris removal, smoothing, hole filling, base capping.

All operations are mesh-in/mesh-out and leave their inputs untouched.
Hole filling and base capping only ever add faces; the sole vertex
movement in this module is the base cap projecting boundary-loop vertices
onto the support plane.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import CapBaseError, DegenerateGeometryError, MeshStructureError
from .geometry import TriangleMesh, _as_points, connected_components, diameter, merge_meshes

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SmoothingParams:
    """Neighbor-averaging strength and iteration count."""

    lam: float = 0.2
    iterations: int = 10

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.iterations < 0 or int(self.iterations) != self.iterations:
            raise ValueError(f"iterations must be a non-negative integer, got {self.iterations}")


@dataclass(frozen=True)
class SupportPlane:
    """Plane {p : normal·p = offset} with a unit, upward-facing normal."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError("support plane normal must be unit length")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", float(self.offset))

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        return _as_points(points) @ self.normal - self.offset

    def project(self, points: np.ndarray) -> np.ndarray:
        pts = _as_points(points)
        return pts - np.outer(self.signed_distance(pts), self.normal)


def remove_isolated_pieces(mesh: TriangleMesh, fraction: float = 0.05) -> TriangleMesh:
    """Drop connected components no larger than ``fraction`` of the mesh.

    A component's size is its bounding-box diagonal; the cutoff is
    ``fraction`` times the whole-mesh diagonal. The largest component
    always survives, so the result is never empty. Idempotent.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie strictly between 0 and 1, got {fraction}")
    if mesh.n_faces == 0:
        raise ValueError("cannot clean an empty mesh")
    components = connected_components(mesh)
    if len(components) == 1:
        return mesh
    cutoff = fraction * diameter(mesh)
    diameters = [diameter(c) for c in components]
    largest = int(np.argmax(diameters))
    kept = [
        c for i, c in enumerate(components)
        if diameters[i] > cutoff or i == largest
    ]
    if len(kept) < len(components):
        logger.debug("removed %d isolated piece(s) of %d components",
                     len(components) - len(kept), len(components))
    return merge_meshes(kept)


def laplacian_smooth(mesh: TriangleMesh, params: SmoothingParams = SmoothingParams()) -> TriangleMesh:
    """Jacobi-style neighbor-averaging smoothing.

    Every iteration moves each vertex toward the mean of its edge
    neighbors by factor lambda, all vertices updated simultaneously from
    the previous iterate. Vertices without neighbors stay put. Output
    vertices are convex combinations of input vertices, so the smoothed
    mesh never leaves the input convex hull.
    """
    if params.iterations == 0 or params.lam == 0.0 or mesh.n_vertices == 0:
        return mesh
    edges = np.vstack([mesh.faces[:, [0, 1]], mesh.faces[:, [1, 2]], mesh.faces[:, [2, 0]]])
    edges = np.unique(np.sort(edges, axis=1), axis=0)
    n = mesh.n_vertices
    row = np.concatenate([edges[:, 0], edges[:, 1]])
    col = np.concatenate([edges[:, 1], edges[:, 0]])
    adjacency = sparse.csr_matrix(
        (np.ones(len(row)), (row, col)), shape=(n, n))
    degree = np.asarray(adjacency.sum(axis=1)).ravel()
    movable = degree > 0
    verts = mesh.vertices.copy()
    for _ in range(params.iterations):
        neighbor_mean = adjacency @ verts
        neighbor_mean[movable] /= degree[movable, None]
        verts[movable] += params.lam * (neighbor_mean[movable] - verts[movable])
    return TriangleMesh(verts, mesh.faces, mesh.colors)


def _directed_edges(mesh: TriangleMesh):
    for a, b, c in mesh.faces:
        yield (int(a), int(b))
        yield (int(b), int(c))
        yield (int(c), int(a))


def boundary_loops(mesh: TriangleMesh) -> list[list[int]]:
    """Vertex loops along edges with exactly one incident face.

    Loops follow the winding of the faces they bound. Raises when face
    windings are inconsistent (a directed edge appearing twice) or the
    boundary is non-manifold (a vertex with two outgoing boundary edges).
    """
    undirected: Counter = Counter()
    directed = set()
    for e in _directed_edges(mesh):
        if e in directed:
            raise MeshStructureError(
                f"directed edge {e} appears twice: mesh is not consistently oriented"
            )
        directed.add(e)
        undirected[(min(e), max(e))] += 1
    nxt: dict[int, int] = {}
    for a, b in directed:
        if undirected[(min(a, b), max(a, b))] == 1:
            if a in nxt:
                raise MeshStructureError(
                    f"vertex {a} has multiple outgoing boundary edges (pinched boundary)"
                )
            nxt[a] = b
    loops: list[list[int]] = []
    remaining = dict(nxt)
    while remaining:
        start = min(remaining)
        loop = [start]
        cur = remaining.pop(start)
        while cur != start:
            loop.append(cur)
            if cur not in remaining:
                raise MeshStructureError(
                    f"boundary chain starting at vertex {start} does not close"
                )
            cur = remaining.pop(cur)
        loops.append(loop)
    return loops


def _best_fit_basis(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Centroid plus two in-plane axes of the least-squares plane."""
    centroid = points.mean(axis=0)
    centered = points - centroid
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    return centroid, vt[0], vt[1]


def _ear_clip(poly2d: np.ndarray) -> list[tuple[int, int, int]]:
    """Triangulate a simple 2D polygon; returns index triples.

    Standard ear clipping: repeatedly cut a convex corner containing no
    other polygon vertex. Falls back to fanning the remainder if no ear
    is found (degenerate ring), which keeps the filler total.
    """
    n = len(poly2d)
    if n < 3:
        return []
    order = list(range(n))
    area2 = 0.0
    for i in range(n):
        x0, y0 = poly2d[i]
        x1, y1 = poly2d[(i + 1) % n]
        area2 += x0 * y1 - x1 * y0
    ccw = area2 >= 0.0
    tris: list[tuple[int, int, int]] = []
    guard = 0
    while len(order) > 3 and guard < 10 * n:
        guard += 1
        clipped = False
        m = len(order)
        for k in range(m):
            i0, i1, i2 = order[(k - 1) % m], order[k], order[(k + 1) % m]
            a, b, c = poly2d[i0], poly2d[i1], poly2d[i2]
            cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
            if (cross <= 1e-14) if ccw else (cross >= -1e-14):
                continue  # reflex or flat corner
            if any(_point_in_triangle(poly2d[j], a, b, c)
                   for j in order if j not in (i0, i1, i2)):
                continue
            tris.append((i0, i1, i2))
            del order[k]
            clipped = True
            break
        if not clipped:
            break
    if len(order) >= 3:
        for k in range(1, len(order) - 1):
            tris.append((order[0], order[k], order[k + 1]))
    return tris


def _point_in_triangle(p, a, b, c) -> bool:
    d1 = (p[0] - b[0]) * (a[1] - b[1]) - (a[0] - b[0]) * (p[1] - b[1])
    d2 = (p[0] - c[0]) * (b[1] - c[1]) - (b[0] - c[0]) * (p[1] - c[1])
    d3 = (p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])
    has_neg = (d1 < -1e-14) or (d2 < -1e-14) or (d3 < -1e-14)
    has_pos = (d1 > 1e-14) or (d2 > 1e-14) or (d3 > 1e-14)
    return not (has_neg and has_pos)


def fill_holes(mesh: TriangleMesh, max_boundary_edges: int) -> tuple[TriangleMesh, list[list[int]]]:
    """Triangulate boundary loops of up to ``max_boundary_edges`` edges.

    Each small-enough loop is ear-clipped in its own best-fit plane, with
    new faces wound opposite to the boundary so the result stays
    consistently oriented. Returns (mesh, open_loops): loops larger than
    the limit are left open and returned for the caller to report.
    Existing vertices are never moved or deleted.
    """
    if max_boundary_edges < 3:
        raise ValueError("a fillable loop needs at least 3 edges")
    loops = boundary_loops(mesh)
    if not loops:
        return mesh, []
    new_faces = [mesh.faces]
    open_loops: list[list[int]] = []
    for loop in loops:
        if len(loop) > max_boundary_edges:
            open_loops.append(loop)
            continue
        pts = mesh.vertices[loop]
        centroid, u, v = _best_fit_basis(pts)
        poly2d = np.stack([(pts - centroid) @ u, (pts - centroid) @ v], axis=1)
        # Boundary loops run with the face winding; cap triangles must
        # traverse each boundary edge the opposite way.
        tris = [(loop[i2], loop[i1], loop[i0]) for i0, i1, i2 in _ear_clip(poly2d)]
        new_faces.append(np.asarray(tris, dtype=np.int64).reshape(-1, 3))
    if open_loops:
        logger.debug("left %d loop(s) open (larger than %d edges)",
                     len(open_loops), max_boundary_edges)
    return TriangleMesh(mesh.vertices, np.vstack(new_faces), mesh.colors), open_loops


def estimate_support_plane(obj, lowest_fraction: float = 0.05) -> SupportPlane:
    """Least-squares plane through the lowest slice of points.

    Takes the ``lowest_fraction`` of points by z (at least 3; gravity is
    -z by convention), fits a total-least-squares plane, and orients the
    normal upward. Rejects slices that are essentially collinear.
    """
    pts = _as_points(obj)
    if pts.shape[0] < 3:
        raise ValueError("need at least 3 points to fit a support plane")
    count = max(3, int(np.ceil(lowest_fraction * pts.shape[0])))
    lowest = pts[np.argsort(pts[:, 2], kind="stable")[:count]]
    centroid = lowest.mean(axis=0)
    centered = lowest - centroid
    eigvals, eigvecs = np.linalg.eigh(centered.T @ centered)
    if eigvals[1] <= 1e-12 * max(eigvals[2], 1e-300):
        raise DegenerateGeometryError("support points are collinear")
    normal = eigvecs[:, 0]
    if normal[2] < 0:
        normal = -normal
    return SupportPlane(normal, float(normal @ centroid))


def _segments_intersect(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(p3, p4, p1), orient(p3, p4, p2)
    d3, d4 = orient(p1, p2, p3), orient(p1, p2, p4)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))


def cap_base(mesh: TriangleMesh, plane: SupportPlane) -> TriangleMesh:
    """Close open boundary loops against the supporting plane.

    Boundary-loop vertices are projected onto the plane, then each loop
    is fanned from its projected centroid, oriented to match the rest of
    the mesh. A closed mesh passes through unchanged. Loops whose planar
    projection self-intersects cannot be fanned and are rejected.
    """
    loops = boundary_loops(mesh)
    if not loops:
        return mesh
    verts = mesh.vertices.copy()
    for loop in loops:
        verts[loop] = plane.project(verts[loop])
    u = np.array([1.0, 0.0, 0.0])
    if abs(plane.normal @ u) > 0.9:
        u = np.array([0.0, 1.0, 0.0])
    u = u - (u @ plane.normal) * plane.normal
    u /= np.linalg.norm(u)
    v = np.cross(plane.normal, u)
    new_faces = [mesh.faces]
    new_verts = [verts]
    next_index = mesh.n_vertices
    for loop_id, loop in enumerate(loops):
        ring = verts[loop]
        poly2d = np.stack([ring @ u, ring @ v], axis=1)
        m = len(loop)
        for i in range(m):
            for j in range(i + 2, m):
                if i == 0 and j == m - 1:
                    continue  # adjacent around the ring
                if _segments_intersect(poly2d[i], poly2d[(i + 1) % m],
                                       poly2d[j], poly2d[(j + 1) % m]):
                    raise CapBaseError(loop_id, "projected boundary self-intersects")
        center = ring.mean(axis=0)
        new_verts.append(center.reshape(1, 3))
        # Fan (center, next, current) opposes each boundary edge's winding.
        fan = [(next_index, loop[(i + 1) % m], loop[i]) for i in range(m)]
        new_faces.append(np.asarray(fan, dtype=np.int64))
        next_index += 1
    colors = None
    if mesh.colors is not None:
        pad = np.zeros((len(loops), 3), dtype=np.uint8)
        colors = np.vstack([mesh.colors, pad])
    return TriangleMesh(np.vstack(new_verts), np.vstack(new_faces), colors)
