"""Pinhole projection and rigid-transform tests.

Back-projection math: for K = [[fx, 0, cx], [0, fy, cy], [0, 0, 1]],
    K^-1 @ [u, v, 1] = [(u - cx)/fx, (v - cy)/fy, 1]
so p_cam = d * [(u - cx)/fx, (v - cy)/fy, 1].
"""

import numpy as np
import pytest

from vlnav.geometry import (
    BehindCameraError,
    CameraIntrinsics,
    InvalidDepthError,
    PixelOutOfBoundsError,
    PixelTarget,
    Point3,
    Pose,
    back_project,
    pose_compose,
    pose_inverse,
    project,
    sensor_to_world,
)

CAM = CameraIntrinsics(fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=100, height=100)


def random_rotation(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


class TestBackProject:
    def test_principal_point_on_optical_axis(self):
        p = back_project(PixelTarget(50.0, 50.0), 3.0, CAM)
        np.testing.assert_allclose([p.x, p.y, p.z], [0.0, 0.0, 3.0], atol=1e-15)

    def test_hand_evaluated_off_axis_pixel(self):
        # d * K^-1 [150, 50, 1] = 2 * [(150-50)/100, 0, 1] = [2, 0, 2]
        p = back_project(PixelTarget(150.0, 50.0), 2.0, CameraIntrinsics(100, 100, 50, 50, 200, 100))
        np.testing.assert_allclose([p.x, p.y, p.z], [2.0, 0.0, 2.0], atol=1e-15)

    def test_returned_z_equals_depth(self):
        assert back_project(PixelTarget(10.0, 20.0), 7.25, CAM).z == 7.25

    def test_zero_depth_rejected(self):
        with pytest.raises(InvalidDepthError):
            back_project(PixelTarget(10.0, 10.0), 0.0, CAM)

    @pytest.mark.parametrize("depth", [-1.0, float("nan"), float("inf")])
    def test_degenerate_depth_rejected(self, depth):
        with pytest.raises(InvalidDepthError):
            back_project(PixelTarget(10.0, 10.0), depth, CAM)

    def test_out_of_bounds_pixel_rejected(self):
        with pytest.raises(PixelOutOfBoundsError):
            back_project(PixelTarget(101.0, 10.0), 1.0, CAM)

    def test_frame_tag(self):
        assert back_project(PixelTarget(10.0, 10.0), 1.0, CAM).frame == "camera"


class TestProject:
    def test_optical_axis_maps_to_principal_point(self):
        px = project(Point3(0.0, 0.0, 7.5, "camera"), CAM)
        assert (px.x, px.y) == (50.0, 50.0)

    def test_inverse_of_back_project_example(self):
        px = project(Point3(2.0, 0.0, 2.0, "camera"), CameraIntrinsics(100, 100, 50, 50, 200, 100))
        np.testing.assert_allclose([px.x, px.y], [150.0, 50.0], atol=1e-12)

    def test_behind_camera_rejected(self):
        with pytest.raises(BehindCameraError):
            project(Point3(1.0, 1.0, -2.0, "camera"), CAM)
        with pytest.raises(BehindCameraError):
            project(Point3(1.0, 1.0, 0.0, "camera"), CAM)

    def test_round_trip_10k_random_pixels(self):
        rng = np.random.default_rng(7)
        xs = rng.uniform(0.0, CAM.width, 10_000)
        ys = rng.uniform(0.0, CAM.height, 10_000)
        ds = rng.uniform(1e-3, 100.0, 10_000)
        worst = 0.0
        for x, y, d in zip(xs, ys, ds):
            px = project(back_project(PixelTarget(x, y), d, CAM), CAM)
            worst = max(worst, abs(px.x - x), abs(px.y - y))
        assert worst < 1e-9


class TestSensorToWorld:
    def test_identity_chain(self):
        p = sensor_to_world(Point3(1.0, 2.0, 3.0, "camera"), Pose.identity(), Pose.identity())
        np.testing.assert_allclose([p.x, p.y, p.z], [1.0, 2.0, 3.0])
        assert p.frame == "world"

    def test_pure_translation(self):
        body = Pose(np.eye(3), [1.0, 2.0, 3.0])
        p = sensor_to_world(Point3(0.0, 0.0, 0.0, "camera"), Pose.identity(), body)
        np.testing.assert_allclose([p.x, p.y, p.z], [1.0, 2.0, 3.0])

    def test_90_degree_yaw_rotates_x_to_y(self):
        body = Pose.from_yaw(np.pi / 2.0, [5.0, -1.0, 2.0])
        p = sensor_to_world(Point3(1.0, 0.0, 0.0, "camera"), Pose.identity(), body)
        np.testing.assert_allclose([p.x, p.y, p.z], [5.0, 0.0, 2.0], atol=1e-12)

    def test_full_chain_matches_sequential_application(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            extr = Pose(random_rotation(rng), rng.normal(size=3))
            body = Pose(random_rotation(rng), rng.normal(size=3))
            v = rng.normal(size=3)
            expected = body.apply(extr.apply(v))
            got = sensor_to_world(Point3.from_vec(v, "lidar"), extr, body)
            np.testing.assert_allclose(got.vec, expected, atol=1e-12)

    def test_isometry_preserves_pairwise_distances(self):
        rng = np.random.default_rng(11)
        extr = Pose(random_rotation(rng), rng.normal(size=3))
        body = Pose(random_rotation(rng), rng.normal(size=3))
        pts = rng.normal(scale=5.0, size=(30, 3))
        out = np.array(
            [sensor_to_world(Point3.from_vec(p, "lidar"), extr, body).vec for p in pts]
        )
        d_in = np.linalg.norm(pts[:, None] - pts[None, :], axis=2)
        d_out = np.linalg.norm(out[:, None] - out[None, :], axis=2)
        assert np.abs(d_in - d_out).max() < 1e-9


class TestPose:
    def test_compose_identity(self):
        rng = np.random.default_rng(5)
        p = Pose(random_rotation(rng), rng.normal(size=3))
        q = pose_compose(Pose.identity(), p)
        np.testing.assert_allclose(q.rotation, p.rotation)
        np.testing.assert_allclose(q.translation, p.translation)

    def test_compose_with_inverse_is_identity(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            p = Pose(random_rotation(rng), rng.normal(size=3))
            ident = pose_compose(p, pose_inverse(p))
            assert np.abs(ident.rotation - np.eye(3)).max() < 1e-9
            assert np.abs(ident.translation).max() < 1e-9

    def test_compose_equals_sequential_application(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            p = Pose(random_rotation(rng), rng.normal(size=3))
            q = Pose(random_rotation(rng), rng.normal(size=3))
            v = rng.normal(size=3)
            np.testing.assert_allclose(
                pose_compose(p, q).apply(v), p.apply(q.apply(v)), atol=1e-9
            )

    def test_constructed_rotations_are_valid(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            r = random_rotation(rng)
            p = Pose(r, np.zeros(3))
            assert np.abs(p.rotation.T @ p.rotation - np.eye(3)).max() < 1e-9
            assert abs(np.linalg.det(p.rotation) - 1.0) < 1e-9

    def test_invalid_rotation_rejected(self):
        with pytest.raises(ValueError):
            Pose(np.eye(3) * 2.0, np.zeros(3))
        with pytest.raises(ValueError):
            Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))  # det -1

    def test_apply_batch_matches_scalar(self):
        rng = np.random.default_rng(10)
        p = Pose(random_rotation(rng), rng.normal(size=3))
        pts = rng.normal(size=(7, 3))
        batch = p.apply(pts)
        for i in range(7):
            np.testing.assert_allclose(batch[i], p.apply(pts[i]), atol=1e-12)

    def test_immutable(self):
        p = Pose.identity()
        with pytest.raises(ValueError):
            p.rotation[0, 0] = 2.0


class TestIntrinsicsValidation:
    def test_negative_focal_rejected(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(-1.0, 100.0, 50.0, 50.0, 100, 100)

    def test_principal_point_outside_image_rejected(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(100.0, 100.0, 100.0, 50.0, 100, 100)


def test_point3_rejects_non_finite():
    with pytest.raises(ValueError):
        Point3(float("nan"), 0.0, 0.0)
