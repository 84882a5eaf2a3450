"""Synthetic geometry and image builders shared across tests."""

from __future__ import annotations

import numpy as np

from foodmetry.geometry import TriangleMesh

CUBE_VERTS = np.array(
    [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
     (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)], dtype=np.float64)

# Outward-oriented unit cube; signed volume +1.
CUBE_FACES = np.array(
    [(0, 2, 1), (0, 3, 2),   # z = 0
     (4, 5, 6), (4, 6, 7),   # z = 1
     (0, 1, 5), (0, 5, 4),   # y = 0
     (2, 3, 7), (2, 7, 6),   # y = 1
     (0, 4, 7), (0, 7, 3),   # x = 0
     (1, 2, 6), (1, 6, 5)],  # x = 1
    dtype=np.int64)


def cube(side: float = 1.0, origin=(0.0, 0.0, 0.0)) -> TriangleMesh:
    return TriangleMesh(CUBE_VERTS * side + np.asarray(origin, dtype=np.float64), CUBE_FACES)


def tetrahedron(scale: float = 1.0) -> TriangleMesh:
    verts = scale * np.array(
        [(1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)], dtype=np.float64)
    faces = np.array([(0, 1, 2), (0, 2, 3), (0, 3, 1), (1, 3, 2)], dtype=np.int64)
    return TriangleMesh(verts, faces)


def icosphere(radius: float = 1.0, subdivisions: int = 2) -> TriangleMesh:
    """Icosahedron subdivided and projected onto a sphere, outward-oriented."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [(-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
         (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
         (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1)], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = verts.tolist()
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(a: int, b: int) -> int:
            key = (min(a, b), max(a, b))
            if key not in cache:
                v = np.asarray(verts[a]) + np.asarray(verts[b])
                v /= np.linalg.norm(v)
                cache[key] = len(verts)
                verts.append(v.tolist())
            return cache[key]

        next_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            next_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = next_faces
    return TriangleMesh(np.asarray(verts) * radius, np.asarray(faces, dtype=np.int64))


def uv_hemisphere(radius: float = 1.0, rings: int = 16, segments: int = 32,
                  closed: bool = False) -> TriangleMesh:
    """Upper hemisphere (z >= 0) with an open equator unless ``closed``."""
    verts = []
    for i in range(rings):  # equator (i=0) up to just below the pole
        polar = (np.pi / 2.0) * (1.0 - i / rings)
        z = radius * np.cos(polar)
        r = radius * np.sin(polar)
        for j in range(segments):
            a = 2.0 * np.pi * j / segments
            verts.append((r * np.cos(a), r * np.sin(a), z))
    pole = len(verts)
    verts.append((0.0, 0.0, radius))
    faces = []
    for i in range(rings - 1):
        for j in range(segments):
            j2 = (j + 1) % segments
            a, b = i * segments + j, i * segments + j2
            c, d = (i + 1) * segments + j, (i + 1) * segments + j2
            faces += [(a, b, d), (a, d, c)]
    top = (rings - 1) * segments
    for j in range(segments):
        faces.append((top + j, top + (j + 1) % segments, pole))
    if closed:
        center = len(verts)
        verts.append((0.0, 0.0, 0.0))
        for j in range(segments):
            faces.append((center, (j + 1) % segments, j))
    return TriangleMesh(np.asarray(verts, dtype=np.float64),
                        np.asarray(faces, dtype=np.int64))


def bumpy_blob(radius: float = 0.1, subdivisions: int = 3) -> TriangleMesh:
    """Asymmetric potato: icosphere with a smooth radial deformation.

    No rotational symmetry, so rigid alignment against a moved copy has a
    unique optimum.
    """
    base = icosphere(radius=1.0, subdivisions=subdivisions)
    x, y, z = base.vertices.T
    bumps = 1.0 + 0.25 * np.sin(4.0 * x + 1.0) * np.cos(3.0 * y - 2.0) + 0.15 * np.sin(2.0 * z)
    return TriangleMesh(base.vertices * (radius * bumps)[:, None], base.faces)


def open_box(size=(0.2, 0.3, 0.15), origin=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Axis-aligned box with the z = origin.z face removed (open bottom)."""
    sx, sy, sz = size
    m = cube()
    verts = m.vertices * np.array([sx, sy, sz]) + np.asarray(origin, dtype=np.float64)
    faces = m.faces[2:]  # drop the two z = 0 faces
    return TriangleMesh(verts, faces)


def open_cylinder(radius: float = 0.5, height: float = 1.0, segments: int = 24) -> TriangleMesh:
    """Tube open at both ends: two boundary loops of ``segments`` edges."""
    verts = []
    for z in (0.0, height):
        for j in range(segments):
            a = 2.0 * np.pi * j / segments
            verts.append((radius * np.cos(a), radius * np.sin(a), z))
    faces = []
    for j in range(segments):
        j2 = (j + 1) % segments
        faces += [(j, j2, segments + j2), (j, segments + j2, segments + j)]
    return TriangleMesh(np.asarray(verts, dtype=np.float64),
                        np.asarray(faces, dtype=np.int64))


def two_component_mesh(separation: float = 3.0, small_side: float = 0.01) -> TriangleMesh:
    """Unit cube plus a far-away small cube in one mesh."""
    big = cube()
    small = cube(side=small_side, origin=(separation, 0.0, 0.0))
    verts = np.vstack([big.vertices, small.vertices])
    faces = np.vstack([big.faces, small.faces + big.n_vertices])
    return TriangleMesh(verts, faces)


def random_rotation(rng: np.random.Generator, max_angle: float) -> np.ndarray:
    """Uniform random axis, angle uniform in [0, max_angle]."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, max_angle)
    k = np.array([[0, -axis[2], axis[1]],
                  [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def textured_checkerboard(seed: int = 7, size: int = 64, square: int = 8) -> np.ndarray:
    """Checkerboard with broadband texture so blurring reduces its spectrum."""
    yy, xx = np.mgrid[0:size, 0:size]
    cells = (yy // square + xx // square) % 2
    rng = np.random.default_rng(seed)
    texture = rng.integers(-25, 26, (size, size))
    return np.clip(np.where(cells == 1, 215, 40) + texture, 0, 255).astype(np.uint8)


def build_corner_scene(alpha: float = 1.0, heights=(0.6, 0.8), square: float = 0.012,
                       extra_points: int = 0, seed: int = 0):
    """Synthetic overhead views of a checkerboard with a known-scale cloud.

    The board lies on the world plane z = 0 with 8x8 squares of edge
    ``square`` model units, centered on the optical axis. One camera per
    entry in ``heights`` looks straight down from that height and renders
    the exact projection of the board. The cloud holds the 9x9 grid of
    board corners (plus optional clutter above the board). Scaling the
    whole scene by ``alpha`` multiplies cloud coordinates and camera
    translations alike, leaving every rendered image unchanged.

    Returns (bundle, images) ready for corner-projection estimation.
    """
    from foodmetry.geometry import PointCloud, RigidTransform
    from foodmetry.sfm import PinholeCamera, SfmBundle

    f = 2000.0
    size, c = 400, 200.0
    flip = np.diag([1.0, -1.0, -1.0])  # look along -z, x kept

    grid = np.array([
        ((j - 4) * square, (i - 4) * square, 0.0)
        for i in range(9) for j in range(9)
    ])
    cloud_pts = grid.copy()
    if extra_points:
        rng = np.random.default_rng(seed)
        clutter = rng.uniform(-0.06, 0.06, (extra_points, 3))
        clutter[:, 2] = rng.uniform(0.15, 0.3, extra_points)  # far off-plane
        cloud_pts = np.vstack([cloud_pts, clutter])

    cameras = {}
    images = []
    for k, h in enumerate(heights):
        name = f"view{k}.png"
        img = np.zeros((size, size), dtype=np.uint8)
        for wi in range(8):
            for wj in range(8):
                if (wi + wj) % 2 != 0:
                    continue
                xs = ((wj - 4) * square, (wj - 3) * square)
                ys = ((wi - 4) * square, (wi - 3) * square)
                u0, u1 = (int(round(c + f * x / h)) for x in xs)
                v1, v0 = (int(round(c - f * y / h)) for y in ys)
                img[v0:v1, u0:u1] = 255
        pose = RigidTransform(flip, np.array([0.0, 0.0, alpha * h]))
        cameras[name] = PinholeCamera(f, f, c, c, size, size, pose)
        images.append((name, img))
    bundle = SfmBundle(cameras, PointCloud(cloud_pts * alpha))
    return bundle, images


def write_corner_scene(root, alpha: float = 1.0, heights=(0.6, 0.8)):
    """Persist a corner scene as an SfM text bundle plus frame PNGs.

    Layout: ``root/bundle/{cameras,images,points3D}.txt`` and
    ``root/frames/rgb/<name>.png``. Returns (bundle_dir, frames_dir).
    """
    from pathlib import Path

    from scipy.spatial.transform import Rotation

    from foodmetry import images as fm_images

    root = Path(root)
    bundle_dir = root / "bundle"
    rgb_dir = root / "frames" / "rgb"
    bundle_dir.mkdir(parents=True, exist_ok=True)
    rgb_dir.mkdir(parents=True, exist_ok=True)

    bundle, views = build_corner_scene(alpha=alpha, heights=heights)
    first = next(iter(bundle.cameras.values()))
    (bundle_dir / "cameras.txt").write_text(
        f"1 PINHOLE {first.width} {first.height} "
        f"{first.fx} {first.fy} {first.cx} {first.cy}\n")
    image_lines = []
    for img_id, (name, img) in enumerate(views, start=1):
        cam = bundle.cameras[name]
        qx, qy, qz, qw = Rotation.from_matrix(cam.pose.rotation).as_quat()
        tx, ty, tz = cam.pose.translation
        image_lines.append(f"{img_id} {qw} {qx} {qy} {qz} {tx} {ty} {tz} 1 {name}")
        image_lines.append("")
        fm_images.save_gray(img, rgb_dir / name)
    (bundle_dir / "images.txt").write_text("\n".join(image_lines) + "\n")
    point_lines = [
        f"{pid} {x} {y} {z} 200 200 200 0.1 1 0"
        for pid, (x, y, z) in enumerate(bundle.cloud.points, start=1)
    ]
    (bundle_dir / "points3D.txt").write_text("\n".join(point_lines) + "\n")
    return bundle_dir, root / "frames"


def render_checkerboard(n_squares: int = 8, square_px: int = 40, margin_px: int = 40,
                        white: int = 255, black: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Render an ideal checkerboard image.

    Returns (image, interior_corners) where interior corners are the
    (n-1)^2 inner grid junctions in (x, y) pixel coordinates. Cell (0, 0)
    at the top-left is white, and colors alternate from there. The
    geometric corner between pixel columns c-1 and c sits at x = c - 0.5.
    """
    side = n_squares * square_px + 2 * margin_px
    img = np.full((side, side), black, dtype=np.uint8)
    for i in range(n_squares):
        for j in range(n_squares):
            if (i + j) % 2 == 0:
                r0 = margin_px + i * square_px
                c0 = margin_px + j * square_px
                img[r0:r0 + square_px, c0:c0 + square_px] = white
    corners = []
    for i in range(1, n_squares):
        for j in range(1, n_squares):
            corners.append((margin_px + j * square_px - 0.5,
                            margin_px + i * square_px - 0.5))
    return img, np.asarray(corners, dtype=np.float64)
