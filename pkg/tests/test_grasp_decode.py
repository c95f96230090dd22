import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pixelgrasp import grasp_decode as gd
from pixelgrasp.errors import DegenerateRange, EmptyMaps, NonPositiveDepth
from pixelgrasp.labels import GraspMaps, encode_angle


def maps_with(q=None, cos=1.0, sin=0.0, w=0.0, shape=(32, 32)):
    planes = GraspMaps(
        q=np.zeros(shape, dtype=np.float32) if q is None else q,
        cos2phi=np.full(shape, cos, dtype=np.float32),
        sin2phi=np.full(shape, sin, dtype=np.float32),
        w=np.full(shape, w, dtype=np.float32),
    )
    return planes


class TestDecodeBest:
    def test_argmax_position(self):
        q = np.zeros((32, 32), dtype=np.float32)
        q[20, 10] = 0.9
        g = gd.decode_best(maps_with(q=q))
        assert (g.u, g.v) == (10, 20)
        assert g.quality == pytest.approx(0.9)

    def test_angle_recovery_cases(self):
        for (c, s), want in (((1.0, 0.0), 0.0), ((0.0, 1.0), math.pi / 4),
                             ((-1.0, 0.0), -math.pi / 2)):
            g = gd.decode_best(maps_with(cos=c, sin=s))
            assert g.phi == pytest.approx(want, abs=1e-12)

    def test_width_denormalized(self):
        g = gd.decode_best(maps_with(w=0.5))
        assert g.width_px == pytest.approx(75.0)

    def test_negative_width_clamped(self):
        g = gd.decode_best(maps_with(w=-0.2))
        assert g.width_px == 0.0

    def test_quality_clamped(self):
        q = np.full((4, 4), 1.7, dtype=np.float32)
        g = gd.decode_best(maps_with(q=q))
        assert g.quality == 1.0

    def test_tie_breaks_row_major(self):
        q = np.zeros((8, 8), dtype=np.float32)
        q[5, 3] = 1.0
        q[2, 6] = 1.0
        g = gd.decode_best(maps_with(q=q, shape=(8, 8)))
        assert (g.u, g.v) == (6, 2)

    def test_empty_maps(self):
        empty = GraspMaps(*(np.zeros((0, 0), dtype=np.float32) for _ in range(4)))
        with pytest.raises(EmptyMaps):
            gd.decode_best(empty)

    @settings(max_examples=30)
    @given(st.integers(0, 10_000), st.floats(-5, 5))
    def test_argmax_invariant_to_constant_shift(self, seed, shift):
        q = np.random.default_rng(seed).random((12, 12)).astype(np.float32)
        a = gd.decode_best(maps_with(q=q, shape=(12, 12)))
        b = gd.decode_best(maps_with(q=q + np.float32(shift), shape=(12, 12)))
        assert (a.u, a.v) == (b.u, b.v)


class TestLocalPeaks:
    def test_global_argmax_first(self):
        q = np.zeros((10, 10))
        q[3, 4] = 1.0
        q[7, 7] = 0.8
        peaks = gd.local_peaks(q)
        assert peaks[0] == (4, 3)
        assert (7, 7) in peaks

    def test_plateau_yields_peaks(self):
        peaks = gd.local_peaks(np.ones((4, 4)))
        assert peaks[0] == (0, 0)


class TestImageToCamera:
    def test_identity_intrinsics(self):
        cam = gd.CameraModel(fx=1, fy=1, cx=0, cy=0)
        assert gd.image_to_camera(2, 3, 1, cam) == (2.0, 3.0, 1.0)

    def test_principal_ray(self):
        cam = gd.CameraModel(fx=500, fy=500, cx=152, cy=152)
        x, y, z = gd.image_to_camera(152, 152, 0.7, cam)
        assert (x, y, z) == (0.0, 0.0, 0.7)

    def test_hand_arithmetic(self):
        cam = gd.CameraModel(fx=500, fy=500, cx=152, cy=152)
        x, y, z = gd.image_to_camera(252, 152, 0.5, cam)
        assert x == pytest.approx(0.1)
        assert y == 0.0 and z == 0.5

    def test_nonpositive_depth(self):
        cam = gd.CameraModel(fx=1, fy=1, cx=0, cy=0)
        with pytest.raises(NonPositiveDepth):
            gd.image_to_camera(1, 1, 0.0, cam)


def yaw_extrinsic(yaw, translation=(0, 0, 0)):
    t = np.eye(4)
    t[:3, :3] = [[math.cos(yaw), -math.sin(yaw), 0],
                 [math.sin(yaw), math.cos(yaw), 0],
                 [0, 0, 1]]
    t[:3, 3] = translation
    return t


class TestCameraToRobot:
    def test_identity_extrinsics(self):
        cam = gd.CameraModel(fx=500, fy=500, cx=0, cy=0)
        pos, phi, w = gd.camera_to_robot((0.1, 0.2, 0.5), 0.3, 75.0, 0.5, cam)
        assert np.allclose(pos, [0.1, 0.2, 0.5])
        assert phi == pytest.approx(0.3)

    def test_pure_translation(self):
        cam = gd.CameraModel(fx=500, fy=500, cx=0, cy=0,
                             t_cam_to_robot=yaw_extrinsic(0.0, (0, 0, 0.1)))
        pos, _, _ = gd.camera_to_robot((0.0, 0.0, 0.5), 0.0, 10.0, 0.5, cam)
        assert pos[2] == pytest.approx(0.6)

    def test_metric_width_similar_triangles(self):
        cam = gd.CameraModel(fx=500, fy=500, cx=0, cy=0)
        _, _, w = gd.camera_to_robot((0, 0, 0.5), 0.0, 75.0, 0.5, cam)
        assert w == pytest.approx(0.075)

    def test_yaw_rotates_angle(self):
        cam = gd.CameraModel(fx=500, fy=500, cx=0, cy=0,
                             t_cam_to_robot=yaw_extrinsic(math.pi / 6))
        _, phi, _ = gd.camera_to_robot((0, 0, 0.5), 0.2, 10.0, 0.5, cam)
        assert phi == pytest.approx(0.2 + math.pi / 6)

    @settings(max_examples=40)
    @given(st.floats(-math.pi, math.pi), st.floats(-0.5, 0.5),
           st.floats(-0.5, 0.5), st.floats(0.05, 1.0))
    def test_frame_roundtrip(self, yaw, tx, ty, tz):
        t = yaw_extrinsic(yaw, (tx, ty, tz))
        cam = gd.CameraModel(fx=300, fy=300, cx=10, cy=10, t_cam_to_robot=t)
        point = (0.12, -0.07, 0.4)
        pos, _, _ = gd.camera_to_robot(point, 0.0, 1.0, 0.4, cam)
        inv = np.linalg.inv(t)
        back = (inv @ np.array([*pos, 1.0]))[:3]
        assert np.allclose(back, point, atol=1e-9)

    def test_non_topdown_warns(self):
        tilt = np.eye(4)
        ang = math.radians(30)
        tilt[:3, :3] = [[1, 0, 0],
                        [0, math.cos(ang), -math.sin(ang)],
                        [0, math.sin(ang), math.cos(ang)]]
        cam = gd.CameraModel(fx=100, fy=100, cx=0, cy=0, t_cam_to_robot=tilt)
        with pytest.warns(UserWarning):
            gd.camera_to_robot((0, 0, 0.5), 0.0, 1.0, 0.5, cam)

    def test_improper_rotation_rejected(self):
        bad = np.eye(4)
        bad[0, 0] = -1.0  # det -1
        with pytest.raises(DegenerateRange):
            gd.CameraModel(fx=1, fy=1, cx=0, cy=0, t_cam_to_robot=bad)


class TestHeatmap:
    def header(self, w, h):
        return f"P6\n{w} {h}\n255\n".encode()

    def test_constant_at_lo(self):
        blob = gd.heatmap_render(np.zeros((2, 3)), 0.0, 1.0)
        header = self.header(3, 2)
        assert blob.startswith(header)
        pixels = np.frombuffer(blob[len(header):], dtype=np.uint8).reshape(2, 3, 3)
        assert (pixels == (0, 0, 128)).all()

    def test_midpoint_green(self):
        blob = gd.heatmap_render(np.full((1, 1), 0.5), 0.0, 1.0)
        pixel = blob[-3:]
        assert pixel == bytes((0, 255, 0))

    def test_hi_red(self):
        blob = gd.heatmap_render(np.full((1, 1), 1.0), 0.0, 1.0)
        assert blob[-3:] == bytes((255, 0, 0))

    def test_2x2_byte_layout(self):
        blob = gd.heatmap_render(np.zeros((2, 2)), 0.0, 1.0)
        header = self.header(2, 2)
        assert blob.startswith(header)
        assert len(blob) == len(header) + 12  # 3 bytes per pixel

    def test_degenerate_range(self):
        with pytest.raises(DegenerateRange):
            gd.heatmap_render(np.zeros((2, 2)), 1.0, 1.0)


def test_angle_roundtrip_dense_grid():
    grid = np.linspace(-math.pi / 2, math.pi / 2, 1000, endpoint=False)
    worst = max(abs(gd.decode_angle(*encode_angle(phi)) - phi) for phi in grid)
    assert worst < 1e-9


def test_decode_pose_composition():
    q = np.zeros((16, 16), dtype=np.float32)
    q[8, 4] = 1.0
    maps = maps_with(q=q, cos=1.0, sin=0.0, w=0.5, shape=(16, 16))
    depth = np.full((16, 16), 0.4)
    cam = gd.CameraModel(fx=100, fy=100, cx=8, cy=8)
    pose = gd.decode_pose(maps, depth, cam)
    assert pose.z == pytest.approx(0.4)
    assert pose.x == pytest.approx((4.5 - 8) * 0.4 / 100)
    assert pose.width == pytest.approx(75.0 * 0.4 / 100)
