import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from pixelgrasp import data_ingest as di
from pixelgrasp.errors import (
    BadMagic,
    IndexOutOfRange,
    LengthMismatch,
    MalformedLine,
    MissingHeaderField,
    PixelGraspError,
    PointCountMismatch,
    TruncatedGroup,
)

PCD_HEADER = """# synthetic cloud
VERSION .7
FIELDS x y z rgb index
SIZE 4 4 4 4 4
TYPE F F F F U
COUNT 1 1 1 1 1
WIDTH {n}
HEIGHT 1
POINTS {n}
DATA ascii
"""


def make_pcd(lines):
    return (PCD_HEADER.format(n=len(lines)) + "\n".join(lines) + "\n").encode()


class TestParsePcd:
    def test_single_point(self):
        points, dims = di.parse_pcd(make_pcd(["0.1 0.2 0.5 0 1920"]))
        assert len(points) == 1
        p = points[0]
        assert (p.x, p.y, p.z, p.pixel_index) == (0.1, 0.2, 0.5, 1920)
        assert dims == (1, 1)

    def test_count_mismatch(self):
        data = (PCD_HEADER.format(n=2) + "0.1 0.2 0.5 0 1\n").encode()
        with pytest.raises(PointCountMismatch):
            di.parse_pcd(data)

    def test_zero_points(self):
        points, _ = di.parse_pcd(PCD_HEADER.format(n=0).encode())
        assert points == []

    def test_missing_fields(self):
        bad = PCD_HEADER.replace("FIELDS x y z rgb index", "FIELDS x y z rgb")
        with pytest.raises(MissingHeaderField):
            di.parse_pcd(bad.format(n=0).encode())

    def test_missing_points_header(self):
        text = "FIELDS x y z index\nDATA ascii\n"
        with pytest.raises(MissingHeaderField):
            di.parse_pcd(text.encode())

    def test_malformed_line_rejected(self):
        with pytest.raises(MalformedLine) as exc:
            di.parse_pcd(make_pcd(["0.1 0.2 banana 0 3"]))
        assert exc.value.line_no == 11

    def test_field_order_respected(self):
        text = ("FIELDS index x y z\nPOINTS 1\nDATA ascii\n7 1.0 2.0 3.0\n").encode()
        points, _ = di.parse_pcd(text)
        assert points[0].pixel_index == 7
        assert points[0].z == 3.0

    def test_nonfinite_z_rejected(self):
        with pytest.raises(MalformedLine):
            di.parse_pcd(make_pcd(["0.1 0.2 nan 0 3"]))


class TestParseRectangles:
    def test_one_rectangle(self):
        text = "0 0\n10 0\n10 30\n0 30\n"
        rects, dropped = di.parse_rectangles(text)
        assert len(rects) == 1 and dropped == 0
        assert np.array_equal(rects[0].corners,
                              [[0, 0], [10, 0], [10, 30], [0, 30]])

    def test_two_rectangles(self):
        text = "0 0\n10 0\n10 30\n0 30\n" * 2
        rects, _ = di.parse_rectangles(text)
        assert len(rects) == 2

    def test_nan_group_dropped_whole(self):
        # Cornell annotation files carry NaN rows; the group drops silently
        text = "0 0\nNaN 0\n10 30\n0 30\n"
        rects, dropped = di.parse_rectangles(text)
        assert rects == [] and dropped == 1

    def test_nan_group_among_valid(self):
        text = "0 0\n10 0\n10 30\n0 30\n1 1\nNaN 1\n2 2\n1 2\n"
        rects, dropped = di.parse_rectangles(text)
        assert len(rects) == 1 and dropped == 1

    def test_truncated_group(self):
        with pytest.raises(TruncatedGroup):
            di.parse_rectangles("0 0\n1 1\n2 2\n")

    def test_malformed_line(self):
        with pytest.raises(MalformedLine):
            di.parse_rectangles("0 0\n1 x\n2 2\n3 3\n")

    @settings(max_examples=200)
    @given(st.text())
    def test_totality_fuzz(self, text):
        try:
            rects, dropped = di.parse_rectangles(text)
        except PixelGraspError:
            return
        assert isinstance(rects, list) and dropped >= 0


class TestProjectToDepth:
    def test_single_point(self):
        depth, valid = di.project_to_depth([di.IndexedPoint(0, 0, 0.5, 0)], 2, 2)
        assert depth[0, 0] == np.float32(0.5)
        assert valid[0, 0] and valid.sum() == 1

    def test_empty(self):
        _, valid = di.project_to_depth([], 3, 3)
        assert not valid.any()

    def test_nearest_wins(self):
        pts = [di.IndexedPoint(0, 0, 0.6, 5), di.IndexedPoint(0, 0, 0.4, 5)]
        depth, valid = di.project_to_depth(pts, 2, 3)
        assert depth.reshape(-1)[5] == np.float32(0.4)
        pts_rev = list(reversed(pts))
        depth2, _ = di.project_to_depth(pts_rev, 2, 3)
        assert depth2.reshape(-1)[5] == np.float32(0.4)

    def test_index_out_of_range(self):
        with pytest.raises(IndexOutOfRange):
            di.project_to_depth([di.IndexedPoint(0, 0, 0.5, 4)], 2, 2)

    @settings(max_examples=50)
    @given(st.lists(st.tuples(st.integers(0, 11), st.floats(0.1, 2.0)), max_size=30))
    def test_conservation(self, entries):
        pts = [di.IndexedPoint(0, 0, z, i) for i, z in entries]
        _, valid = di.project_to_depth(pts, 3, 4)
        assert valid.sum() <= len(pts)
        if len({i for i, _ in entries}) == len(entries):
            assert valid.sum() == len(pts)


class TestTensorFile:
    def test_roundtrip_2x2(self):
        arr = np.array([[1, 2], [3, 4]], dtype=np.float32)
        blob = di.write_tensor(arr)
        assert len(blob) == 4 + 4 + 8 + 16
        back = di.read_tensor(blob)
        assert back.shape == (2, 2)
        assert back.tobytes() == arr.tobytes()

    def test_bad_magic(self):
        blob = bytearray(di.write_tensor(np.ones(3, dtype=np.float32)))
        blob[:4] = b"XXXX"
        with pytest.raises(BadMagic):
            di.read_tensor(bytes(blob))

    def test_length_mismatch(self):
        import struct
        blob = di.TENSOR_MAGIC + struct.pack("<I", 2) + struct.pack("<2I", 2, 2) + b"\0" * 12
        with pytest.raises(LengthMismatch):
            di.read_tensor(blob)

    def test_zero_dim_rejected(self):
        with pytest.raises(LengthMismatch):
            di.write_tensor(np.zeros((2, 0), dtype=np.float32))

    def test_rank_bounds(self):
        with pytest.raises(LengthMismatch):
            di.write_tensor(np.zeros((1, 1, 1, 1, 1), dtype=np.float32))

    @settings(max_examples=60)
    @given(hnp.arrays(np.float32,
                      hnp.array_shapes(min_dims=1, max_dims=4, min_side=1, max_side=5),
                      elements=st.floats(-1e6, 1e6, width=32)))
    def test_roundtrip_bit_exact(self, arr):
        back = di.read_tensor(di.write_tensor(arr))
        assert back.shape == arr.shape
        assert back.tobytes() == arr.astype("<f4").tobytes()


def test_grasp_rectangle_parallelogram_check():
    rect = di.GraspRectangle([[0, 0], [10, 0], [10, 30], [0, 30]])
    assert rect.is_parallelogram(tol=1e-3)
    skew = di.GraspRectangle([[0, 0], [10, 0], [30, 30], [0, 30]])
    assert not skew.is_parallelogram(tol=5.0)
