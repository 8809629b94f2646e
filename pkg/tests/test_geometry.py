import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from monolift.geometry import (
    BOX_EDGES,
    Box3D,
    BoxDims,
    CameraIntrinsics,
    Orientation,
    PointBehindCamera,
    Pose,
    corners_local,
    dehomogenize,
    global_from_local,
    local_from_global,
    project_box,
    project_point,
    ray_angle,
    rotation_from_yaw,
    wrap_angle,
)

angles = st.floats(-10.0, 10.0, allow_nan=False)


# Golden corner order: bit0 -> x, bit1 -> y, bit2 -> z, set bit = minus.
GOLDEN_CORNERS_246 = [
    [1.0, 2.0, 3.0], [-1.0, 2.0, 3.0], [1.0, -2.0, 3.0], [-1.0, -2.0, 3.0],
    [1.0, 2.0, -3.0], [-1.0, 2.0, -3.0], [1.0, -2.0, -3.0], [-1.0, -2.0, -3.0],
]


class TestCorners:
    def test_golden_order(self):
        np.testing.assert_array_equal(corners_local(BoxDims(2.0, 4.0, 6.0)), GOLDEN_CORNERS_246)

    def test_first_corner_is_all_positive(self):
        c = corners_local(BoxDims(1.7, 1.5, 4.2))
        np.testing.assert_array_equal(c[0], [0.85, 0.75, 2.1])

    def test_unit_cube_has_all_sign_patterns(self):
        c = corners_local(BoxDims(2, 2, 2))
        assert {tuple(p) for p in c} == {(x, y, z) for x in (1, -1) for y in (1, -1) for z in (1, -1)}

    def test_corners_sum_to_zero(self):
        np.testing.assert_allclose(corners_local(BoxDims(1.3, 0.7, 5.1)).sum(axis=0), 0.0, atol=1e-15)

    def test_twelve_edges_of_unit_length_pattern(self):
        assert len(BOX_EDGES) == 12
        c = corners_local(BoxDims(2, 2, 2))
        for a, b in BOX_EDGES:
            assert np.count_nonzero(c[a] != c[b]) == 1

    def test_invalid_dims(self):
        with pytest.raises(ValueError):
            BoxDims(1.0, 0.0, 1.0)


class TestRotation:
    def test_zero_is_identity(self):
        np.testing.assert_array_equal(rotation_from_yaw(0.0), np.eye(3))

    def test_quarter_turn_matches_kitti_rotation_y(self):
        # KITTI devkit: R = [cos 0 sin; 0 1 0; -sin 0 cos]
        ry = math.pi / 2
        devkit = np.array([[math.cos(ry), 0, math.sin(ry)], [0, 1, 0], [-math.sin(ry), 0, math.cos(ry)]])
        np.testing.assert_allclose(rotation_from_yaw(ry), devkit, atol=0)
        np.testing.assert_allclose(rotation_from_yaw(ry) @ [1, 0, 0], [0, 0, -1], atol=1e-15)

    @given(angles, angles)
    def test_group_property(self, a, b):
        np.testing.assert_allclose(rotation_from_yaw(a) @ rotation_from_yaw(b),
                                   rotation_from_yaw(a + b), atol=1e-12)

    def test_orthonormal_for_random_angles(self, rng):
        for t in rng.uniform(-math.pi, math.pi, 1000):
            r = rotation_from_yaw(t)
            np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)
            assert abs(np.linalg.det(r) - 1.0) < 1e-12


class TestProjection:
    def test_principal_ray(self):
        k = CameraIntrinsics(1, 1, 0, 0)
        p = project_point(k, Pose.from_yaw(0.0, (0, 0, 1)), (0, 0, 0))
        assert (p.u, p.v) == (0.0, 0.0)

    def test_hand_evaluated_point(self):
        # u = 100 * 1/10 + 50 = 60, v = 100 * 0/10 + 50 = 50
        k = CameraIntrinsics(100, 100, 50, 50)
        p = project_point(k, Pose.from_yaw(0.0, (0, 0, 10)), (1, 0, 0))
        assert (p.u, p.v) == pytest.approx((60.0, 50.0), abs=1e-12)

    @pytest.mark.parametrize("tz", [0.0, -1.0])
    def test_behind_camera(self, tz):
        with pytest.raises(PointBehindCamera):
            project_point(CameraIntrinsics(1, 1, 0, 0), Pose.from_yaw(0.0, (0, 0, tz)), (0, 0, 0))

    def test_baseline_column_is_applied(self, kitti_k):
        # P2 column shifts u by (t0 - u*t2)/z for a point on the optical axis
        p = project_point(kitti_k, Pose.from_yaw(0.0, (0, 0, 10)), (0, 0, 0))
        expected = (kitti_k.cx * 10 + kitti_k.t[0]) / (10 + kitti_k.t[2])
        assert p.u == pytest.approx(expected, abs=1e-12)

    @given(st.floats(1e-3, 1e3))
    def test_homogeneous_scale_invariance(self, c):
        xh = np.array([[123.4, -56.7, 8.9], [1.0, 2.0, 3.0]])
        np.testing.assert_allclose(dehomogenize(c * xh), dehomogenize(xh), rtol=1e-12)

    def test_box_symmetric_on_principal_ray(self):
        k = CameraIntrinsics(700, 700, 600, 180)
        _, r = project_box(k, Pose.from_yaw(0.0, (0, 0, 10)), BoxDims(1, 1, 1))
        assert (r.x_min + r.x_max) / 2 == pytest.approx(600.0, abs=1e-9)
        assert (r.y_min + r.y_max) / 2 == pytest.approx(180.0, abs=1e-9)

    def test_corners_inside_rectangle(self, rng):
        k = CameraIntrinsics(720, 720, 610, 173)
        for _ in range(200):
            pose = Pose.from_yaw(rng.uniform(-math.pi, math.pi),
                                 (rng.uniform(-5, 5), rng.uniform(0, 2), rng.uniform(6, 50)))
            pts, r = project_box(k, pose, BoxDims(*rng.uniform(0.5, 5, 3)))
            assert all(r.contains(p.u, p.v) for p in pts)
            assert min(p.u for p in pts) == r.x_min and max(p.v for p in pts) == r.y_max

    @settings(max_examples=200)
    @given(yaw=st.floats(-math.pi, math.pi), shrink=st.tuples(*[st.floats(0.1, 1.0)] * 3))
    def test_rectangle_monotone_in_dims(self, yaw, shrink):
        k = CameraIntrinsics(720, 720, 610, 173)
        pose = Pose.from_yaw(yaw, (1.0, 1.2, 15.0))
        big = BoxDims(4.0, 1.5, 1.8)
        small = BoxDims(*(s * d for s, d in zip(shrink, (4.0, 1.5, 1.8))))
        _, rb = project_box(k, pose, big)
        _, rs = project_box(k, pose, small)
        tol = 1e-9
        assert rb.x_min <= rs.x_min + tol and rb.y_min <= rs.y_min + tol
        assert rs.x_max <= rb.x_max + tol and rs.y_max <= rb.y_max + tol


class TestAngles:
    def test_wrap_boundaries(self):
        assert wrap_angle(math.pi) == -math.pi
        assert wrap_angle(-math.pi) == -math.pi
        assert wrap_angle(0.0) == 0.0
        assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)

    @given(angles)
    def test_wrap_range(self, x):
        y = wrap_angle(x)
        assert -math.pi <= y < math.pi
        assert math.cos(y) == pytest.approx(math.cos(x), abs=1e-9)

    def test_wrap_array_matches_scalar(self, rng):
        xs = rng.uniform(-20, 20, 100)
        np.testing.assert_allclose(wrap_angle(xs), [wrap_angle(float(x)) for x in xs], atol=1e-12)

    def test_ray_angle(self):
        k = CameraIntrinsics(700, 700, 600, 180)
        assert ray_angle(k, 600) == 0.0
        assert ray_angle(k, 1300) == pytest.approx(math.pi / 4)
        assert ray_angle(k, -100) == pytest.approx(-math.pi / 4)

    def test_global_from_local(self):
        assert global_from_local(0.0, 0.0) == 0.0
        assert global_from_local(math.pi / 2, math.pi / 2) == -math.pi

    def test_local_global_inverse(self, rng):
        for a, b in rng.uniform(-math.pi, math.pi, (1000, 2)):
            back = local_from_global(global_from_local(a, b), b)
            assert abs(wrap_angle(back - a)) < 1e-12

    def test_orientation_is_upright_only(self):
        assert Orientation(4.0).theta == pytest.approx(4.0 - 2 * math.pi)
        with pytest.raises(ValueError):
            Orientation(0.0, phi=0.1)


class TestCameraIntrinsics:
    def test_projection_matrix_round_trip(self, kitti_k):
        p = kitti_k.projection_matrix()
        assert CameraIntrinsics.from_projection(p) == kitti_k
        np.testing.assert_array_equal(CameraIntrinsics.from_projection(p).projection_matrix(), p)

    def test_rejects_nonpositive_focal(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(0, 1, 0, 0)

    def test_rejects_skew(self):
        p = np.array([[700, 1, 600, 0], [0, 700, 180, 0], [0, 0, 1, 0]], dtype=float)
        with pytest.raises(ValueError):
            CameraIntrinsics.from_projection(p)


def test_box3d_corners_match_kitti_devkit_layout():
    # Devkit: length along x, bottom-center location, y_corners in [-h, 0].
    h, w, l, ry = 1.5, 1.6, 3.8, 0.7
    loc = np.array([2.0, 1.6, 20.0])
    xs = [l / 2, l / 2, -l / 2, -l / 2, l / 2, l / 2, -l / 2, -l / 2]
    ys = [0, 0, 0, 0, -h, -h, -h, -h]
    zs = [w / 2, -w / 2, -w / 2, w / 2, w / 2, -w / 2, -w / 2, w / 2]
    r = np.array([[math.cos(ry), 0, math.sin(ry)], [0, 1, 0], [-math.sin(ry), 0, math.cos(ry)]])
    devkit = (r @ np.array([xs, ys, zs])).T + loc
    box = Box3D(loc - [0, h / 2, 0], BoxDims.from_hwl(h, w, l), ry)
    ours = box.corners()
    assert sorted(map(tuple, np.round(devkit, 12))) == sorted(map(tuple, np.round(ours, 12)))
