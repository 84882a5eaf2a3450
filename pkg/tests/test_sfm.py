import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from foodmetry.errors import (
    BundleParseError,
    NoVisiblePointError,
    UnsupportedCameraModelError,
)
from foodmetry.geometry import PointCloud, RigidTransform
from foodmetry.sfm import (
    PinholeCamera,
    nearest_projected_point,
    parse_bundle,
    project,
    project_points,
    quaternion_to_rotation,
)

IDENTITY_CAM = PinholeCamera(500.0, 500.0, 320.0, 240.0, 640, 480,
                             RigidTransform.identity())


def write_bundle(directory, images, points, camera_line="1 PINHOLE 640 480 500 500 320 240"):
    (directory / "cameras.txt").write_text(
        "# Camera list with one line of data per camera\n" + camera_line + "\n")
    img_lines = ["# Image list with two lines of data per image"]
    for img_id, (name, q, t) in enumerate(images, start=1):
        qw, qx, qy, qz = q
        tx, ty, tz = t
        img_lines.append(f"{img_id} {qw} {qx} {qy} {qz} {tx} {ty} {tz} 1 {name}")
        img_lines.append("")  # observation line, empty
    (directory / "images.txt").write_text("\n".join(img_lines) + "\n")
    pt_lines = ["# 3D point list"]
    for pid, (x, y, z) in enumerate(points, start=1):
        pt_lines.append(f"{pid} {x} {y} {z} 128 128 128 0.5 1 0")
    (directory / "points3D.txt").write_text("\n".join(pt_lines) + "\n")


class TestProject:
    def test_on_axis_point(self):
        assert project(IDENTITY_CAM, (0, 0, 1)) == pytest.approx((320.0, 240.0))

    def test_behind_camera(self):
        assert project(IDENTITY_CAM, (0, 0, -1)) is None

    def test_off_axis_point(self):
        assert project(IDENTITY_CAM, (0.1, 0, 1)) == pytest.approx((370.0, 240.0))

    def test_project_unproject_identity(self):
        rot = Rotation.from_euler("xyz", [10, -5, 30], degrees=True).as_matrix()
        cam = PinholeCamera(420.0, 410.0, 300.0, 200.0, 640, 480,
                            RigidTransform(rot, np.array([0.2, -0.1, 0.4])))
        rng = np.random.default_rng(0)
        for _ in range(50):
            u, v = rng.uniform(0, 640), rng.uniform(0, 480)
            depth = rng.uniform(0.2, 5.0)
            q = np.array([(u - cam.cx) / cam.fx * depth,
                          (v - cam.cy) / cam.fy * depth, depth])
            world = cam.pose.inverse().apply(q.reshape(1, 3))[0]
            got = project(cam, world)
            assert got == pytest.approx((u, v), abs=1e-6)


class TestNearestProjectedPoint:
    def test_single_visible_point(self):
        cloud = PointCloud(np.array([[0.3, -0.2, 2.0]]))
        got = nearest_projected_point(IDENTITY_CAM, cloud, (9999, -50))
        assert np.allclose(got, [0.3, -0.2, 2.0])

    def test_strictly_closer_point_wins(self):
        # Points projecting to (100, 100) and (200, 200); query (110, 105).
        a = np.array([(100 - 320) / 500, (100 - 240) / 500, 1.0])
        b = np.array([(200 - 320) / 500, (200 - 240) / 500, 1.0])
        cloud = PointCloud(np.stack([a, b]))
        got = nearest_projected_point(IDENTITY_CAM, cloud, (110, 105))
        assert np.allclose(got, a)

    def test_tie_breaks_to_lowest_index(self):
        a = np.array([(100 - 320) / 500, 0, 1.0])
        b = np.array([(200 - 320) / 500, 0, 1.0])
        cloud = PointCloud(np.stack([b, a]))  # b first
        got = nearest_projected_point(IDENTITY_CAM, cloud, (150, 240))
        assert np.allclose(got, b)

    def test_behind_camera_points_excluded(self):
        cloud = PointCloud(np.array([[0, 0, -1.0], [0.5, 0.5, 2.0]]))
        got = nearest_projected_point(IDENTITY_CAM, cloud, (320, 240))
        assert np.allclose(got, [0.5, 0.5, 2.0])

    def test_all_behind_camera_is_error(self):
        cloud = PointCloud(np.array([[0, 0, -1.0], [1, 1, -2.0]]))
        with pytest.raises(NoVisiblePointError):
            nearest_projected_point(IDENTITY_CAM, cloud, (320, 240))

    def test_permutation_invariant_without_ties(self):
        rng = np.random.default_rng(8)
        pts = rng.uniform(-0.5, 0.5, (30, 3)) + [0, 0, 2.0]
        cloud = PointCloud(pts)
        perm = rng.permutation(30)
        shuffled = PointCloud(pts[perm])
        for _ in range(10):
            pixel = rng.uniform(0, 640), rng.uniform(0, 480)
            assert np.allclose(
                nearest_projected_point(IDENTITY_CAM, cloud, pixel),
                nearest_projected_point(IDENTITY_CAM, shuffled, pixel),
            )


class TestParseBundle:
    def test_identity_pose(self, tmp_path):
        write_bundle(tmp_path, [("a.png", (1, 0, 0, 0), (0, 0, 0))], [(1, 2, 3)])
        bundle = parse_bundle(tmp_path)
        cam = bundle.cameras["a.png"]
        assert np.allclose(cam.pose.rotation, np.eye(3))
        assert np.allclose(cam.pose.translation, 0.0)
        assert (cam.fx, cam.fy, cam.cx, cam.cy) == (500, 500, 320, 240)
        assert np.allclose(bundle.cloud.points, [[1, 2, 3]])

    def test_zero_quaternion_rejected(self, tmp_path):
        write_bundle(tmp_path, [("a.png", (0, 0, 0, 0), (0, 0, 0))], [(1, 2, 3)])
        with pytest.raises(BundleParseError):
            parse_bundle(tmp_path)

    def test_two_image_pose_roundtrip(self, tmp_path):
        poses = []
        images = []
        for k, name in enumerate(["img0.png", "img1.png"]):
            rot = Rotation.from_euler("zyx", [20 * k + 5, -8, 13], degrees=True)
            qx, qy, qz, qw = rot.as_quat()
            t = (0.1 * k, -0.2, 0.3)
            poses.append((rot.as_matrix(), np.asarray(t)))
            images.append((name, (qw, qx, qy, qz), t))
        write_bundle(tmp_path, images, [(0, 0, 5)])
        bundle = parse_bundle(tmp_path)
        for (name, _, _), (rot, t) in zip(images, poses):
            cam = bundle.cameras[name]
            assert np.abs(cam.pose.rotation - rot).max() < 1e-9
            assert np.abs(cam.pose.translation - t).max() < 1e-9

    def test_unknown_camera_model(self, tmp_path):
        write_bundle(tmp_path, [("a.png", (1, 0, 0, 0), (0, 0, 0))], [(1, 2, 3)],
                     camera_line="1 OPENCV 640 480 500 500 320 240 0 0 0 0")
        with pytest.raises(UnsupportedCameraModelError):
            parse_bundle(tmp_path)

    def test_simple_pinhole_supported(self, tmp_path):
        write_bundle(tmp_path, [("a.png", (1, 0, 0, 0), (0, 0, 0))], [(1, 2, 3)],
                     camera_line="1 SIMPLE_PINHOLE 640 480 450 320 240")
        cam = parse_bundle(tmp_path).cameras["a.png"]
        assert cam.fx == cam.fy == 450

    def test_empty_point_file_rejected(self, tmp_path):
        write_bundle(tmp_path, [("a.png", (1, 0, 0, 0), (0, 0, 0))], [])
        with pytest.raises(BundleParseError):
            parse_bundle(tmp_path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(BundleParseError):
            parse_bundle(tmp_path)

    def test_duplicate_image_name_rejected(self, tmp_path):
        write_bundle(tmp_path,
                     [("a.png", (1, 0, 0, 0), (0, 0, 0)),
                      ("a.png", (1, 0, 0, 0), (1, 0, 0))],
                     [(1, 2, 3)])
        with pytest.raises(BundleParseError):
            parse_bundle(tmp_path)


def test_quaternion_to_rotation_matches_scipy():
    rng = np.random.default_rng(2)
    for _ in range(25):
        q = rng.normal(size=4)
        rot = quaternion_to_rotation(*q)
        qn = q / np.linalg.norm(q)
        expected = Rotation.from_quat([qn[1], qn[2], qn[3], qn[0]]).as_matrix()
        assert np.abs(rot - expected).max() < 1e-12


def test_project_points_matches_scalar_project():
    rng = np.random.default_rng(13)
    pts = rng.normal(size=(100, 3)) + [0, 0, 1.0]
    uv, ok = project_points(IDENTITY_CAM, pts)
    for p, row, visible in zip(pts, uv, ok):
        single = project(IDENTITY_CAM, p)
        if single is None:
            assert not visible
        else:
            assert visible
            assert np.allclose(row, single)


def test_pinhole_camera_validation():
    with pytest.raises(ValueError):
        PinholeCamera(-1, 500, 320, 240, 640, 480, RigidTransform.identity())
    with pytest.raises(ValueError):
        PinholeCamera(500, 500, 700, 240, 640, 480, RigidTransform.identity())
