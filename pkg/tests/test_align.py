import numpy as np
import pytest

from foodmetry.align import (
    AlignmentResult,
    IcpParams,
    align_pipeline,
    centroid_align,
    chamfer_pose_gradient,
    icp,
    load_transform,
    refine_gradient,
    save_transform,
    _rodrigues,
)
from foodmetry.errors import DegenerateGeometryError
from foodmetry.geometry import (
    RigidTransform,
    SimilarityTransform,
    TriangleMesh,
    sample_surface,
)
from foodmetry.metrics import chamfer
from helpers import bumpy_blob, random_rotation


def rotation_angle(r1, r2):
    cos = (np.trace(r1.T @ r2) - 1.0) / 2.0
    return float(np.arccos(np.clip(cos, -1.0, 1.0)))


def brute_chamfer(src, dst, rot, t):
    moved = src @ rot.T + t
    d2 = ((moved[:, None, :] - dst[None, :, :]) ** 2).sum(axis=-1)
    return d2.min(axis=1).mean() + d2.min(axis=0).mean()


class TestCentroidAlign:
    def test_identical_clouds(self):
        pts = np.random.default_rng(0).normal(size=(30, 3))
        t = centroid_align(pts, pts)
        assert np.allclose(t.translation, 0.0)
        assert np.array_equal(t.rotation, np.eye(3))

    def test_known_shift(self):
        pts = np.random.default_rng(1).normal(size=(25, 3))
        t = centroid_align(pts, pts + [1.0, 2.0, 3.0])
        assert np.allclose(t.translation, [1.0, 2.0, 3.0], atol=1e-12)

    def test_centroid_difference(self):
        src = np.array([[1.0, 0, 0], [-1.0, 0, 0]])
        dst = np.array([[0, 0, 4.0], [0, 0, 6.0]])
        t = centroid_align(src, dst)
        assert np.allclose(t.translation, [0, 0, 5.0])


class TestIcp:
    def test_recovers_known_rigid_perturbation(self):
        rng = np.random.default_rng(9)
        src = rng.normal(size=(400, 3)) * 0.1
        for trial in range(5):
            rot = random_rotation(rng, np.radians(10))
            t = rng.uniform(-0.05, 0.05, 3)
            dst = src @ rot.T + t
            got = icp(src, dst, init=centroid_align(src, dst))
            assert rotation_angle(got.rotation, rot) < 1e-6
            assert np.linalg.norm(got.translation - t) < 1e-6

    def test_identity_case_converges_within_two_iterations(self):
        pts = np.random.default_rng(3).normal(size=(100, 3))
        got = icp(pts, pts, init=RigidTransform.identity(),
                  params=IcpParams(max_iterations=2))
        assert rotation_angle(got.rotation, np.eye(3)) < 1e-9
        assert np.linalg.norm(got.translation) < 1e-9

    def test_collinear_points_rejected(self):
        src = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], float)
        dst = np.array([[0, 1, 0], [1, 1, 0], [2, 1, 0]], float)
        with pytest.raises(DegenerateGeometryError):
            icp(src, dst)

    def test_too_few_points_rejected(self):
        with pytest.raises(ValueError):
            icp(np.zeros((2, 3)), np.zeros((5, 3)))

    def test_correspondence_cutoff_ignores_outliers(self):
        rng = np.random.default_rng(10)
        src = rng.normal(size=(300, 3)) * 0.1
        t = np.array([0.01, -0.02, 0.005])
        dst = np.vstack([src + t, [[50.0, 50.0, 50.0]]])  # one far outlier
        got = icp(src, dst, init=RigidTransform.identity(),
                  params=IcpParams(correspondence_cutoff=1.0))
        assert np.linalg.norm(got.translation - t) < 1e-9

    def test_cutoff_with_no_survivors_rejected(self):
        src = np.random.default_rng(4).normal(size=(10, 3))
        dst = src + 100.0
        with pytest.raises(DegenerateGeometryError):
            icp(src, dst, params=IcpParams(correspondence_cutoff=1e-6))

    def test_params_validation(self):
        with pytest.raises(ValueError):
            IcpParams(max_iterations=0)


class TestChamferPoseGradient:
    def test_matches_central_finite_differences(self):
        # Pre-build oracle: analytic gradient against central differences
        # of the true Chamfer objective at 10 random generic poses.
        rng = np.random.default_rng(2024)
        eps = 1e-6
        for _ in range(10):
            src = rng.normal(size=(120, 3)) * 0.3
            dst = rng.normal(size=(150, 3)) * 0.3 + rng.normal(size=3) * 0.1
            pose = RigidTransform(_rodrigues(rng.normal(size=3) * 0.2),
                                  rng.normal(size=3) * 0.05)
            objective, grad = chamfer_pose_gradient(src, dst, pose)
            assert objective == pytest.approx(
                brute_chamfer(src, dst, pose.rotation, pose.translation), abs=1e-12)
            fd = np.zeros(6)
            for k in range(6):
                for sign in (1.0, -1.0):
                    d = np.zeros(6)
                    d[k] = sign * eps
                    rot = _rodrigues(d[:3]) @ pose.rotation
                    fd[k] += sign * brute_chamfer(src, dst, rot, pose.translation + d[3:])
            fd /= 2 * eps
            rel = np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-10)
            assert rel.max() < 1e-4


class TestRefineGradient:
    def test_already_optimal_returns_init(self):
        pts = np.random.default_rng(5).normal(size=(60, 3))
        init = RigidTransform.identity()
        got = refine_gradient(pts, pts, init)
        assert got is init

    def test_small_offset_strictly_improves(self):
        blob = bumpy_blob(radius=0.1, subdivisions=2)
        cloud = sample_surface(blob, 2000, seed=0).points
        offset = RigidTransform(np.eye(3), np.array([1e-3, 0.0, 0.0]))
        before = chamfer(offset.apply(cloud), cloud).value
        got = refine_gradient(cloud, cloud, init=offset)
        after = chamfer(got.apply(cloud), cloud).value
        assert after < before

    def test_objective_never_increases_along_the_way(self):
        rng = np.random.default_rng(6)
        src = rng.normal(size=(200, 3)) * 0.2
        dst = rng.normal(size=(220, 3)) * 0.2
        init = RigidTransform.identity()
        got = refine_gradient(src, dst, init, steps=30)
        assert (chamfer(got.apply(src), dst).value
                <= chamfer(init.apply(src), dst).value + 1e-15)


class TestAlignPipeline:
    def test_perturbed_copy_recovered(self):
        rng = np.random.default_rng(7)
        mesh = bumpy_blob(radius=0.1, subdivisions=3)
        rot = random_rotation(rng, np.radians(10))
        trans = rng.uniform(-0.05, 0.05, 3)
        pred = TriangleMesh(mesh.vertices @ rot.T + trans, mesh.faces)
        res = align_pipeline(pred, mesh, n_samples=8000, seed=7)
        assert res.chamfer_final < 1e-8
        assert rotation_angle(res.transform.rigid.rotation, rot.T) < 1e-4
        assert np.linalg.norm(res.transform.rigid.translation + rot.T @ trans) < 1e-4

    def test_identical_meshes_stay_at_zero(self):
        mesh = bumpy_blob(radius=0.1, subdivisions=2)
        res = align_pipeline(mesh, mesh, n_samples=3000, seed=1)
        assert res.chamfer_before == res.chamfer_after_icp == res.chamfer_final == 0.0

    def test_stage_values_monotone(self):
        rng = np.random.default_rng(8)
        mesh = bumpy_blob(radius=0.1, subdivisions=2)
        pred = TriangleMesh(mesh.vertices @ random_rotation(rng, 0.3).T + 0.02, mesh.faces)
        res = align_pipeline(pred, mesh, n_samples=3000, seed=2)
        assert res.chamfer_before >= res.chamfer_after_icp >= res.chamfer_final
        values = [entry["chamfer"] for entry in res.stage_log]
        assert values == sorted(values, reverse=True)

    def test_equivariance_under_pre_transform(self):
        rng = np.random.default_rng(9)
        mesh = bumpy_blob(radius=0.1, subdivisions=3)
        base = TriangleMesh(mesh.vertices @ random_rotation(rng, 0.1).T + 0.01, mesh.faces)
        res_a = align_pipeline(base, mesh, n_samples=8000, seed=3)
        pre = RigidTransform(random_rotation(rng, np.radians(5)), rng.uniform(-0.02, 0.02, 3))
        moved = TriangleMesh(pre.apply(base.vertices), base.faces)
        res_b = align_pipeline(moved, mesh, n_samples=8000, seed=3)
        assert abs(res_a.chamfer_final - res_b.chamfer_final) < 1e-9
        # The two final poses must agree once the pre-transform is undone.
        composed = res_b.transform.rigid.compose(pre)
        assert rotation_angle(composed.rotation, res_a.transform.rigid.rotation) < 1e-4
        assert np.linalg.norm(composed.translation - res_a.transform.rigid.translation) < 1e-4

    def test_recovered_rotation_is_orthonormal(self):
        rng = np.random.default_rng(11)
        mesh = bumpy_blob(radius=0.08, subdivisions=2)
        pred = TriangleMesh(mesh.vertices @ random_rotation(rng, 0.2).T + 0.03, mesh.faces)
        res = align_pipeline(pred, mesh, n_samples=2000, seed=5)
        rot = res.transform.rigid.rotation
        assert np.abs(rot @ rot.T - np.eye(3)).max() < 1e-9
        assert abs(np.linalg.det(rot) - 1.0) < 1e-9


class TestAlignmentResult:
    def test_monotonicity_enforced(self):
        with pytest.raises(ValueError):
            AlignmentResult(SimilarityTransform.identity(), 1.0, 2.0, 0.5)

    def test_transform_roundtrip(self, tmp_path):
        rng = np.random.default_rng(12)
        t = SimilarityTransform(1.0, RigidTransform(random_rotation(rng, 1.0),
                                                    rng.normal(size=3)))
        path = tmp_path / "transform.txt"
        save_transform(t, path)
        back = load_transform(path)
        assert np.abs(back.matrix() - t.matrix()).max() < 1e-12
        # 4 rows of 4 columns, row-major plain text
        rows = path.read_text().strip().splitlines()
        assert len(rows) == 4
        assert all(len(r.split()) == 4 for r in rows)
        assert rows[3].split() == ["0", "0", "0", "1"]
