import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semfield.errors import DomainError
from semfield.geometry import (Camera, Pose, Ray, pixel_directions, project,
                               ray_for_pixel, reproject)

CAM = Camera.from_hfov(64, 48, 90.0)
BOUNDS = (0.1, 10.0)


def random_pose(seed):
    rng = np.random.default_rng(seed)
    eye = rng.uniform(-2, 2, 3)
    target = eye + rng.uniform(-1, 1, 3)
    if np.linalg.norm(target - eye) < 1e-6:
        target = eye + np.array([0.0, 0.0, -1.0])
    return Pose.look_at(eye, target)


class TestCamera:
    def test_from_hfov_90_deg(self):
        # tan(45 deg) = 1 so the focal length equals half the width
        assert CAM.fx == pytest.approx(32.0)
        assert CAM.cx == pytest.approx(32.0)
        assert CAM.cy == pytest.approx(24.0)

    def test_invalid_dimensions_rejected(self):
        with pytest.raises(DomainError):
            Camera(0, 48, 32, 32, 16, 24)
        with pytest.raises(DomainError):
            Camera(64, 48, -1.0, 32, 16, 24)
        with pytest.raises(DomainError):
            Camera(64, 48, 32, 32, 64, 24)  # cx outside image


class TestPose:
    def test_non_orthonormal_rejected(self):
        with pytest.raises(DomainError):
            Pose(np.eye(3) * 2.0, np.zeros(3))

    def test_reflection_rejected(self):
        r = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(DomainError):
            Pose(r, np.zeros(3))

    def test_matrix_round_trip(self):
        p = random_pose(3)
        q = Pose.from_matrix(p.matrix())
        np.testing.assert_allclose(q.rotation, p.rotation)
        np.testing.assert_allclose(q.translation, p.translation)

    def test_look_at_points_at_target(self):
        p = Pose.look_at((0, 0, 5), (0, 0, 0))
        # camera -z axis (third rotation column negated) points at the target
        fwd = -p.rotation[:, 2]
        np.testing.assert_allclose(fwd, [0, 0, -1], atol=1e-12)


class TestRayForPixel:
    def test_principal_point_gives_optical_axis(self):
        # spec example: px at principal point -> rotation applied to (0,0,-1)
        pose = random_pose(1)
        # principal point (cx, cy) = pixel centre at (cx - 0.5, cy - 0.5)
        ray = ray_for_pixel(CAM, pose, (CAM.cx - 0.5, CAM.cy - 0.5), BOUNDS)
        np.testing.assert_allclose(ray.direction, pose.rotation @ [0, 0, -1],
                                   atol=1e-12)

    def test_left_edge_45_degrees_off_axis(self):
        # spec example: 90 deg HFOV, left edge centre row -> x-component of the
        # unnormalised direction is -(cx - 0.5)/fx (derived from tan(HFOV/2))
        ray = ray_for_pixel(CAM, Pose.identity(), (0, CAM.cy - 0.5), BOUNDS)
        d = ray.direction / -ray.direction[2]  # undo normalisation
        assert d[0] == pytest.approx(-(CAM.cx - 0.5) / CAM.fx)
        # ~45 degrees off the optical axis
        angle = np.degrees(np.arccos(-ray.direction[2]))
        assert angle == pytest.approx(45.0, abs=1.0)

    def test_direction_always_unit(self):
        pose = random_pose(2)
        for px in [(0, 0), (63, 47), (10, 30)]:
            ray = ray_for_pixel(CAM, pose, px, BOUNDS)
            assert np.linalg.norm(ray.direction) == pytest.approx(1.0, abs=1e-12)

    def test_out_of_bounds_pixel_rejected(self):
        with pytest.raises(DomainError):
            ray_for_pixel(CAM, Pose.identity(), (64, 0), BOUNDS)
        with pytest.raises(DomainError):
            ray_for_pixel(CAM, Pose.identity(), (0, -1), BOUNDS)

    def test_direction_ignores_translation(self):
        rot = random_pose(4).rotation
        a = ray_for_pixel(CAM, Pose(rot, np.zeros(3)), (5, 7), BOUNDS)
        b = ray_for_pixel(CAM, Pose(rot, np.array([3.0, -1.0, 2.0])), (5, 7), BOUNDS)
        np.testing.assert_allclose(a.direction, b.direction)

    def test_pixel_directions_matches_single_rays(self):
        pose = random_pose(5)
        dirs = pixel_directions(CAM, pose)
        for px in [(0, 0), (13, 21), (63, 47)]:
            ray = ray_for_pixel(CAM, pose, px, BOUNDS)
            np.testing.assert_allclose(dirs[px[1], px[0]], ray.direction,
                                       atol=1e-12)


class TestRay:
    def test_non_unit_direction_rejected(self):
        with pytest.raises(DomainError):
            Ray(np.zeros(3), np.array([1.0, 1.0, 0.0]), 0.1, 10.0)

    def test_invalid_bounds_rejected(self):
        d = np.array([0.0, 0.0, -1.0])
        with pytest.raises(DomainError):
            Ray(np.zeros(3), d, 0.0, 10.0)
        with pytest.raises(DomainError):
            Ray(np.zeros(3), d, 5.0, 1.0)

    def test_at(self):
        ray = Ray(np.array([1.0, 2.0, 3.0]), np.array([0.0, 0.0, -1.0]), 0.1, 10.0)
        np.testing.assert_allclose(ray.at(2.0), [1.0, 2.0, 1.0])


class TestReproject:
    def test_identity_pose_round_trip(self):
        # spec example: pose_src = pose_tgt returns px within 0.5 pixel
        pose = random_pose(6)
        for px in [(0, 0), (31, 23), (63, 47)]:
            uv = reproject(px, 2.0, pose, pose, CAM)
            assert uv is not None
            assert np.abs(uv - np.array(px, dtype=float)).max() <= 0.5

    def test_lateral_shift_derived_by_hand(self):
        # spec example: point on the optical axis at depth 2 m, target camera
        # translated +0.1 m along camera x -> projection shifts -0.1 * fx / 2
        src = Pose.identity()
        tgt = Pose(np.eye(3), np.array([0.1, 0.0, 0.0]))
        px = (CAM.cx - 0.5, CAM.cy - 0.5)
        uv = reproject(px, 2.0, src, tgt, CAM)
        assert uv is not None
        assert uv[0] - px[0] == pytest.approx(-0.1 * CAM.fx / 2.0, abs=1e-9)
        assert uv[1] == pytest.approx(px[1], abs=1e-9)

    def test_point_behind_target_returns_none(self):
        src = Pose.identity()
        # target at z = -5 looking further along -z: the lifted point at
        # depth 2 (z = -2) sits behind it
        tgt = Pose(np.eye(3), np.array([0.0, 0.0, -5.0]))
        assert reproject((31, 23), 2.0, src, tgt, CAM) is None

    def test_nonpositive_depth_rejected(self):
        with pytest.raises(DomainError):
            reproject((31, 23), 0.0, Pose.identity(), Pose.identity(), CAM)
        with pytest.raises(DomainError):
            reproject((31, 23), -1.0, Pose.identity(), Pose.identity(), CAM)

    def test_src_tgt_src_composition(self):
        # forward-backward reprojection with consistent depths returns the
        # start pixel within 1 px
        src = Pose.identity()
        tgt = Pose.look_at((0.2, 0.1, 0.1), (0.0, 0.0, -3.0))
        px = (31.5, 23.5)
        depth = 2.5
        uv = reproject(px, depth, src, tgt, CAM)
        assert uv is not None
        # consistent target depth of the same 3D world point
        ray = ray_for_pixel(CAM, src, px, BOUNDS)
        point = ray.origin + depth * ray.direction
        _, tgt_depth = project(point, tgt, CAM)
        back = reproject(uv, tgt_depth, tgt, src, CAM)
        assert back is not None
        assert np.abs(back - np.array(px)).max() <= 1.0


@settings(max_examples=100, deadline=None)
@given(x=st.integers(0, 63), y=st.integers(0, 47),
       depth=st.floats(0.2, 8.0), seed=st.integers(0, 50))
def test_reproject_identity_property(x, y, depth, seed):
    pose = random_pose(seed)
    uv = reproject((x, y), depth, pose, pose, CAM)
    assert uv is not None
    assert np.abs(uv - np.array([x, y], dtype=float)).max() <= 0.5
