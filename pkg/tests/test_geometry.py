import numpy as np
import pytest

from relieve.geometry import (
    CameraIntrinsics,
    GeometryError,
    PoseSE3,
    backproject,
    camera_center,
    left_jacobian,
    left_jacobian_inv,
    project,
    se3_exp,
    se3_exp_with_grads,
    se3_log,
    so3_exp,
    to_world,
)


K_UNIT = CameraIntrinsics(1.0, 1.0, 0.0, 0.0, 2, 2)
K_VGA = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)


def random_pose(rng, max_angle=2.5):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0, max_angle)
    return PoseSE3(so3_exp(angle * axis), rng.normal(size=3))


class TestBackproject:
    def test_principal_point_unit(self):
        assert np.allclose(backproject((0, 0), 1.0, K_UNIT), [0, 0, 1])

    def test_principal_point_offset(self):
        k = CameraIntrinsics(2.0, 2.0, 1.0, 1.0, 4, 4)
        assert np.allclose(backproject((1, 1), 5.0, k), [0, 0, 5])

    def test_off_axis(self):
        # d * K^-1 [u; 1] evaluated directly
        assert np.allclose(backproject((420, 240), 2.0, K_VGA), [0.4, 0.0, 2.0])

    def test_rejects_nonpositive_depth(self):
        with pytest.raises(GeometryError):
            backproject((1, 1), 0.0, K_VGA)
        with pytest.raises(GeometryError):
            backproject((1, 1), -2.0, K_VGA)

    def test_homogeneous_in_depth(self):
        # bitwise-exact for power-of-two scalings (exact float products)
        p1 = backproject((123.25, 88.5), 1.7, K_VGA)
        for s in (2.0, 8.0, 0.25):
            ps = backproject((123.25, 88.5), s * 1.7, K_VGA)
            assert np.array_equal(s * p1, ps)
        # and to a few ulp for generic scalings
        p3 = backproject((123.25, 88.5), 3 * 1.7, K_VGA)
        assert np.allclose(3 * p1, p3, rtol=1e-15)


class TestProject:
    def test_optical_axis_hits_principal_point(self):
        assert np.allclose(project((0, 0, 3.0), K_VGA), [320, 240])

    def test_inverse_of_backproject(self):
        assert np.allclose(project((0.4, 0, 2.0), K_VGA), [420, 240])

    def test_behind_camera(self):
        with pytest.raises(GeometryError):
            project((0, 0, -1.0), K_VGA)
        with pytest.raises(GeometryError):
            project((1.0, 1.0, 0.0), K_VGA)

    def test_roundtrip_over_image_and_depths(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            u = np.array(
                [rng.uniform(0, K_VGA.width - 1), rng.uniform(0, K_VGA.height - 1)]
            )
            d = 10.0 ** rng.uniform(-3, 3)
            u2 = project(backproject(u, d, K_VGA), K_VGA)
            assert np.max(np.abs(u2 - u)) < 1e-9


class TestToWorld:
    def test_identity(self):
        assert np.allclose(to_world((1, 2, 3), PoseSE3.identity()), [1, 2, 3])

    def test_pure_translation(self):
        pose = PoseSE3(np.eye(3), np.array([0.0, 0.0, 10.0]))
        assert np.allclose(to_world((0, 0, 1), pose), [0, 0, 11])

    def test_rotation_about_z(self):
        pose = PoseSE3(so3_exp([0, 0, np.pi / 2]), np.zeros(3))
        assert np.allclose(to_world((1, 0, 0), pose), [0, 1, 0], atol=1e-12)


class TestCameraCenter:
    def test_identity(self):
        assert np.allclose(camera_center(PoseSE3.identity()), 0.0)

    def test_translation_is_center(self):
        pose = PoseSE3(np.eye(3), np.array([1.0, 2.0, 3.0]))
        assert np.allclose(camera_center(pose), [1, 2, 3])

    def test_independent_of_rotation(self):
        t = np.array([1.0, 2.0, 3.0])
        a = PoseSE3(np.eye(3), t)
        b = PoseSE3(so3_exp([0.3, -0.2, 0.9]), t)
        assert np.array_equal(camera_center(a), camera_center(b))


class TestSE3ExpLog:
    def test_zero_tangent_is_identity(self):
        pose = se3_exp(np.zeros(6))
        assert np.allclose(pose.rotation, np.eye(3))
        assert np.allclose(pose.translation, 0.0)

    def test_quarter_turn_about_z(self):
        pose = se3_exp([0, 0, np.pi / 2, 0, 0, 0])
        assert np.allclose(pose.rotation @ [1, 0, 0], [0, 1, 0], atol=1e-12)
        assert np.allclose(pose.translation, 0.0)

    def test_log_of_identity(self):
        assert np.allclose(se3_log(PoseSE3.identity()), 0.0)

    def test_log_quarter_turn(self):
        xi = se3_log(se3_exp([0, 0, np.pi / 2, 0, 0, 0]))
        assert np.allclose(xi[:3], [0, 0, np.pi / 2], atol=1e-12)

    def test_exp_output_is_valid_rotation(self):
        rng = np.random.default_rng(11)
        for _ in range(300):
            pose = se3_exp(rng.normal(0, 1.2, size=6))
            R = pose.rotation
            assert np.max(np.abs(R.T @ R - np.eye(3))) < 1e-9
            assert abs(np.linalg.det(R) - 1.0) < 1e-9

    def test_log_exp_roundtrip(self):
        rng = np.random.default_rng(13)
        for _ in range(300):
            omega = rng.normal(size=3)
            omega *= rng.uniform(0, np.pi - 0.1) / np.linalg.norm(omega)
            xi = np.concatenate([omega, rng.normal(size=3)])
            assert np.max(np.abs(se3_log(se3_exp(xi)) - xi)) < 1e-9

    def test_exp_log_roundtrip_all_poses(self):
        # includes rotations near pi where the skew part degenerates
        rng = np.random.default_rng(17)
        for _ in range(300):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            angle = rng.uniform(0, np.pi)
            pose = PoseSE3(so3_exp(angle * axis), rng.normal(size=3))
            back = se3_exp(se3_log(pose))
            assert np.max(np.abs(back.rotation - pose.rotation)) < 1e-9
            assert np.max(np.abs(back.translation - pose.translation)) < 1e-9

    def test_small_angle_branch(self):
        xi = np.array([1e-10, -2e-10, 5e-11, 0.3, -0.2, 0.1])
        pose = se3_exp(xi)
        assert np.max(np.abs(se3_log(pose) - xi)) < 1e-15

    def test_left_jacobian_inverse(self):
        rng = np.random.default_rng(19)
        for _ in range(50):
            omega = rng.normal(0, 1.0, size=3)
            J = left_jacobian(omega)
            assert np.max(np.abs(J @ left_jacobian_inv(omega) - np.eye(3))) < 1e-12


class TestExpGrads:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(23)
        h = 1e-7
        for _ in range(40):
            xi = rng.normal(0, 0.8, size=6)
            _, _, dR, dtdo, V = se3_exp_with_grads(xi)
            for j in range(6):
                xp = xi.copy()
                xm = xi.copy()
                xp[j] += h
                xm[j] -= h
                pp, pm = se3_exp(xp), se3_exp(xm)
                fd_t = (pp.translation - pm.translation) / (2 * h)
                if j < 3:
                    fd_R = (pp.rotation - pm.rotation) / (2 * h)
                    assert np.max(np.abs(fd_R - dR[j])) < 1e-6
                    assert np.max(np.abs(fd_t - dtdo[:, j])) < 1e-6
                else:
                    assert np.max(np.abs(fd_t - V[:, j - 3])) < 1e-6


class TestValidation:
    def test_intrinsics_reject_bad_focal(self):
        with pytest.raises(GeometryError):
            CameraIntrinsics(-1.0, 1.0, 0.0, 0.0, 4, 4)

    def test_intrinsics_reject_outside_principal_point(self):
        with pytest.raises(GeometryError):
            CameraIntrinsics(1.0, 1.0, 5.0, 0.0, 4, 4)

    def test_pose_rejects_non_orthonormal(self):
        with pytest.raises(GeometryError):
            PoseSE3(np.eye(3) * 2.0, np.zeros(3))

    def test_pose_rejects_reflection(self):
        R = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(GeometryError):
            PoseSE3(R, np.zeros(3))

    def test_compose_inverse(self):
        rng = np.random.default_rng(29)
        for _ in range(20):
            a = random_pose(rng)
            b = random_pose(rng)
            p = rng.normal(size=3)
            lhs = a.apply(b.apply(p))
            rhs = a.compose(b).apply(p)
            assert np.allclose(lhs, rhs, atol=1e-12)
            roundtrip = a.inverse().apply(a.apply(p))
            assert np.allclose(roundtrip, p, atol=1e-12)
