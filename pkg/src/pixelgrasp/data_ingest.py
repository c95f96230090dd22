"""Cornell-style dataset parsing and the portable tensor file format.

All parsers are pure functions over byte/str buffers; nothing here touches
the filesystem except through the bytes handed in by the caller.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagic,
    IndexOutOfRange,
    LengthMismatch,
    MalformedLine,
    MissingHeaderField,
    PointCountMismatch,
    TruncatedGroup,
)

TENSOR_MAGIC = b"UGT1"


@dataclass(frozen=True)
class IndexedPoint:
    """One point-cloud sample: camera-frame metric position plus the
    row-major pixel offset (row*width + col) it was sampled from."""

    x: float
    y: float
    z: float
    pixel_index: int


@dataclass
class GraspRectangle:
    """Oriented grasp annotation. corners is (4, 2) float (u, v) pixels,
    ordered so the edge corners[0] -> corners[1] is one gripper jaw plate."""

    corners: np.ndarray

    def __post_init__(self):
        self.corners = np.asarray(self.corners, dtype=np.float64).reshape(4, 2)

    def is_parallelogram(self, tol: float = 5.0) -> bool:
        """Opposite edges equal length within tol pixels (annotation noise)."""
        c = self.corners
        e01 = np.linalg.norm(c[1] - c[0])
        e23 = np.linalg.norm(c[3] - c[2])
        e12 = np.linalg.norm(c[2] - c[1])
        e30 = np.linalg.norm(c[0] - c[3])
        return abs(e01 - e23) <= tol and abs(e12 - e30) <= tol

    def translated(self, du: float, dv: float) -> "GraspRectangle":
        return GraspRectangle(self.corners + np.array([du, dv]))

    def transformed(self, fn) -> "GraspRectangle":
        """Map every corner through fn((4,2) array) -> (4,2) array."""
        return GraspRectangle(fn(self.corners))


@dataclass
class RgbdSample:
    """One aligned RGB+depth frame with its grasp annotations.

    rgb: (H, W, 3) float, values in [0, 255].
    depth: (H, W) float, native units; depth_valid marks trustworthy pixels.
    """

    rgb: np.ndarray
    depth: np.ndarray
    depth_valid: np.ndarray
    pos_rects: list = field(default_factory=list)
    neg_rects: list = field(default_factory=list)

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]


# --------------------------------------------------------------------------
# PCD point clouds
# --------------------------------------------------------------------------

def parse_pcd(data: bytes) -> tuple[list[IndexedPoint], tuple[int, int]]:
    """Parse an ASCII point-cloud file into indexed points.

    The header must declare FIELDS containing x, y, z and index, and a
    POINTS count; exactly that many data lines must follow the DATA line
    (or the header, if no DATA line is present). Returns the points and
    the declared (WIDTH, HEIGHT) dims, (0, 0) when undeclared.
    """
    text = data.decode("ascii", errors="replace")
    lines = text.splitlines()

    fields = None
    points_declared = None
    width = height = 0
    data_start = None
    for i, line in enumerate(lines):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        token = stripped.split()
        key = token[0].upper()
        if key == "FIELDS":
            fields = token[1:]
        elif key == "POINTS":
            try:
                points_declared = int(token[1])
            except (IndexError, ValueError):
                raise MalformedLine(i + 1, "unreadable POINTS count")
        elif key == "WIDTH":
            width = int(token[1]) if len(token) > 1 and token[1].isdigit() else 0
        elif key == "HEIGHT":
            height = int(token[1]) if len(token) > 1 and token[1].isdigit() else 0
        elif key == "DATA":
            data_start = i + 1
            break
        elif _looks_numeric(token[0]):
            # headerless data line: header section has ended
            data_start = i
            break

    if fields is None:
        raise MissingHeaderField("FIELDS")
    if points_declared is None:
        raise MissingHeaderField("POINTS")
    for name in ("x", "y", "z", "index"):
        if name not in fields:
            raise MissingHeaderField(f"FIELDS lacks '{name}'")
    ix, iy, iz, ii = (fields.index(n) for n in ("x", "y", "z", "index"))
    needed = max(ix, iy, iz, ii) + 1

    if data_start is None:
        data_start = len(lines)
    data_lines = [
        (n, ln) for n, ln in enumerate(lines[data_start:], start=data_start + 1)
        if ln.strip()
    ]
    if len(data_lines) != points_declared:
        raise PointCountMismatch(
            f"header declares {points_declared} points, found {len(data_lines)} lines"
        )

    points = []
    for line_no, line in data_lines:
        tok = line.split()
        if len(tok) < needed:
            raise MalformedLine(line_no, "too few columns")
        try:
            x, y, z = float(tok[ix]), float(tok[iy]), float(tok[iz])
            idx = int(float(tok[ii]))
        except ValueError:
            raise MalformedLine(line_no, "numeric parse failed")
        if not math.isfinite(z):
            raise MalformedLine(line_no, "non-finite z")
        points.append(IndexedPoint(x, y, z, idx))
    return points, (width, height)


def _looks_numeric(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


# --------------------------------------------------------------------------
# Rectangle annotation files
# --------------------------------------------------------------------------

def parse_rectangles(text: str) -> tuple[list[GraspRectangle], int]:
    """Parse groups of four "u v" lines into grasp rectangles.

    Groups containing any NaN coordinate are dropped whole (the Cornell
    annotations contain such rows); the count of dropped groups is
    returned alongside the rectangles. A line count not divisible by 4
    raises TruncatedGroup.
    """
    lines = [(n, ln) for n, ln in enumerate(text.splitlines(), start=1) if ln.strip()]
    if len(lines) % 4 != 0:
        raise TruncatedGroup(f"{len(lines)} corner lines is not a multiple of 4")

    rects = []
    dropped = 0
    for g in range(0, len(lines), 4):
        corners = np.empty((4, 2), dtype=np.float64)
        has_nan = False
        for k in range(4):
            line_no, line = lines[g + k]
            tok = line.split()
            if len(tok) < 2:
                raise MalformedLine(line_no, "expected 'u v'")
            try:
                u, v = float(tok[0]), float(tok[1])
            except ValueError:
                raise MalformedLine(line_no, "numeric parse failed")
            if math.isnan(u) or math.isnan(v):
                has_nan = True
            corners[k] = (u, v)
        if has_nan:
            dropped += 1
            continue
        rects.append(GraspRectangle(corners))
    return rects, dropped


# --------------------------------------------------------------------------
# Depth projection
# --------------------------------------------------------------------------

def project_to_depth(points: list[IndexedPoint], height: int, width: int):
    """Scatter indexed points into an (H, W) depth image.

    Returns (depth, valid) where valid marks pixels that received a point.
    Duplicate indices keep the smaller z (nearest surface).
    """
    depth = np.zeros((height, width), dtype=np.float32)
    valid = np.zeros((height, width), dtype=bool)
    n = height * width
    flat_d = depth.reshape(-1)
    flat_v = valid.reshape(-1)
    for p in points:
        if not (0 <= p.pixel_index < n):
            raise IndexOutOfRange(f"pixel_index {p.pixel_index} outside {height}x{width}")
        if not flat_v[p.pixel_index] or p.z < flat_d[p.pixel_index]:
            flat_d[p.pixel_index] = p.z
            flat_v[p.pixel_index] = True
    return depth, valid


# --------------------------------------------------------------------------
# Tensor file format
# --------------------------------------------------------------------------
# Layout: magic "UGT1" | ndim u32 LE | dims ndim*u32 LE | payload f32 LE
# row-major. ndim in [1, 4]; payload length is exactly 4*prod(dims).

def write_tensor(tensor: np.ndarray) -> bytes:
    arr = np.asarray(tensor, dtype=np.float32)
    if not 1 <= arr.ndim <= 4:
        raise LengthMismatch(f"rank {arr.ndim} outside [1, 4]")
    if any(d == 0 for d in arr.shape):
        raise LengthMismatch("zero-extent dimension")
    out = bytearray(TENSOR_MAGIC)
    out += struct.pack("<I", arr.ndim)
    out += struct.pack(f"<{arr.ndim}I", *arr.shape)
    out += np.ascontiguousarray(arr).astype("<f4").tobytes()
    return bytes(out)


def read_tensor_from(data: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Read one tensor record starting at offset; returns (tensor, end offset)."""
    if len(data) < offset + 8:
        raise LengthMismatch("truncated header")
    if data[offset:offset + 4] != TENSOR_MAGIC:
        raise BadMagic(f"expected {TENSOR_MAGIC!r}, got {data[offset:offset + 4]!r}")
    (ndim,) = struct.unpack_from("<I", data, offset + 4)
    if not 1 <= ndim <= 4:
        raise LengthMismatch(f"declared rank {ndim} outside [1, 4]")
    header_end = offset + 8 + 4 * ndim
    if len(data) < header_end:
        raise LengthMismatch("truncated dims")
    dims = struct.unpack_from(f"<{ndim}I", data, offset + 8)
    count = int(np.prod(dims, dtype=np.int64))
    end = header_end + 4 * count
    if len(data) < end:
        raise LengthMismatch(
            f"dims {dims} require {4 * count} payload bytes, got {len(data) - header_end}"
        )
    payload = np.frombuffer(data, dtype="<f4", offset=header_end, count=count)
    return payload.reshape(dims).astype(np.float32), end


def read_tensor(data: bytes) -> np.ndarray:
    tensor, end = read_tensor_from(data, 0)
    if end != len(data):
        raise LengthMismatch(f"{len(data) - end} trailing bytes after payload")
    return tensor


def read_tensor_file(path) -> np.ndarray:
    with open(path, "rb") as f:
        return read_tensor(f.read())


def write_tensor_file(path, tensor: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(write_tensor(tensor))
