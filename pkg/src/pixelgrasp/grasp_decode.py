"""Turn predicted grasp maps into a 5D grasp pose.

Pipeline: pixel argmax over the quality plane, half-arctangent angle
recovery from the doubled-angle planes, width denormalization, pinhole
back-projection and the rigid camera-to-robot transform.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateRange, EmptyMaps, NonPositiveDepth
from .labels import WIDTH_NORM, GraspMaps, wrap_half_pi


@dataclass
class ImageGrasp:
    """Image-space grasp: pixel position, orientation, width in pixels."""

    u: int
    v: int
    phi: float
    width_px: float
    quality: float


@dataclass
class GraspPose:
    """Robot-base-frame grasp: meters and radians."""

    x: float
    y: float
    z: float
    phi: float
    width: float
    quality: float

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "z": self.z,
                "phi": self.phi, "width": self.width, "quality": self.quality}


def _identity_extrinsic():
    return np.eye(4)


@dataclass
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    t_cam_to_robot: np.ndarray = field(default_factory=_identity_extrinsic)

    def __post_init__(self):
        self.t_cam_to_robot = np.asarray(self.t_cam_to_robot, dtype=np.float64).reshape(4, 4)
        if self.fx <= 0 or self.fy <= 0:
            raise DegenerateRange("focal lengths must be positive")
        r = self.t_cam_to_robot[:3, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-9) or np.linalg.det(r) < 0:
            raise DegenerateRange("extrinsic rotation is not orthonormal with det +1")

    @classmethod
    def from_json_dict(cls, doc: dict) -> "CameraModel":
        ext = np.asarray(doc.get("extrinsic", np.eye(4).ravel()), dtype=np.float64)
        return cls(fx=float(doc["fx"]), fy=float(doc["fy"]),
                   cx=float(doc["cx"]), cy=float(doc["cy"]),
                   t_cam_to_robot=ext.reshape(4, 4))


def decode_angle(cos2phi: float, sin2phi: float) -> float:
    """Recover the orientation as half the arctangent of the doubled-angle
    pair, wrapped into [-pi/2, pi/2)."""
    return wrap_half_pi(0.5 * math.atan2(sin2phi, cos2phi))


def decode_best(maps: GraspMaps, smooth: bool = False) -> ImageGrasp:
    """Select the grasp at the maximum of the quality plane.

    Ties resolve to the smallest row-major index. smooth applies an
    optional 3x3 mean filter to Q before the argmax (off by default; the
    raw maximum is selected).
    """
    q = np.asarray(maps.q, dtype=np.float64)
    if q.size == 0:
        raise EmptyMaps("empty quality plane")
    if smooth:
        q = _box3(q)
    flat_idx = int(q.argmax())
    v, u = divmod(flat_idx, q.shape[1])
    return _grasp_at(maps, u, v)


def _grasp_at(maps: GraspMaps, u: int, v: int) -> ImageGrasp:
    phi = decode_angle(float(maps.cos2phi[v, u]), float(maps.sin2phi[v, u]))
    width_px = max(WIDTH_NORM * float(maps.w[v, u]), 0.0)
    quality = min(max(float(maps.q[v, u]), 0.0), 1.0)
    return ImageGrasp(u=u, v=v, phi=phi, width_px=width_px, quality=quality)


def _box3(q: np.ndarray) -> np.ndarray:
    padded = np.pad(q, 1, mode="edge")
    out = np.zeros_like(q)
    for dr in range(3):
        for dc in range(3):
            out += padded[dr:dr + q.shape[0], dc:dc + q.shape[1]]
    return out / 9.0


def local_peaks(q: np.ndarray) -> list[tuple[int, int]]:
    """8-neighborhood local maxima of the quality plane, best first.

    A pixel is a peak when it is >= all eight neighbours; ordering is by
    descending value then row-major index, so the global argmax is first.
    """
    q = np.asarray(q, dtype=np.float64)
    h, w = q.shape
    padded = np.pad(q, 1, mode="constant", constant_values=-np.inf)
    is_peak = np.ones((h, w), dtype=bool)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            is_peak &= q >= padded[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
    rows, cols = np.nonzero(is_peak)
    order = np.lexsort((cols, rows, -q[rows, cols]))
    return [(int(cols[i]), int(rows[i])) for i in order]


def grasp_at_pixel(maps: GraspMaps, u: int, v: int) -> ImageGrasp:
    """Decode the grasp at an explicit pixel (used for retry peaks)."""
    return _grasp_at(maps, u, v)


def image_to_camera(u: float, v: float, d: float, cam: CameraModel):
    """Pinhole back-projection of pixel (u, v) at depth d (camera frame)."""
    if d <= 0:
        raise NonPositiveDepth(f"depth {d}")
    x = (u - cam.cx) * d / cam.fx
    y = (v - cam.cy) * d / cam.fy
    return x, y, d


def camera_to_robot(point, phi_image: float, width_px: float, d: float,
                    cam: CameraModel) -> tuple[np.ndarray, float, float]:
    """Map a camera-frame grasp into the robot base frame.

    Returns (position, phi, width_m). The metric width follows similar
    triangles at the grasp depth (width_px * d / fx); the grasp angle is
    carried through the extrinsic rotation's in-plane (yaw) action, which
    is exact for a top-down camera.
    """
    t = cam.t_cam_to_robot
    hom = np.array([point[0], point[1], point[2], 1.0])
    position = (t @ hom)[:3]
    width_m = width_px * d / cam.fx
    r = t[:3, :3]
    if abs(abs(r[2, 2]) - 1.0) > 1e-6:
        warnings.warn("extrinsic rotation is not top-down; grasp angle mapping is approximate")
    direction = r @ np.array([math.cos(phi_image), math.sin(phi_image), 0.0])
    phi = wrap_half_pi(math.atan2(direction[1], direction[0]))
    return position, phi, width_m


def decode_pose(maps: GraspMaps, depth: np.ndarray, cam: CameraModel,
                smooth: bool = False) -> GraspPose:
    """Full image-maps-to-robot-pose decode at the quality argmax."""
    g = decode_best(maps, smooth=smooth)
    d = float(depth[g.v, g.u])
    point = image_to_camera(g.u + 0.5, g.v + 0.5, d, cam)
    position, phi, width = camera_to_robot(point, g.phi, g.width_px, d, cam)
    return GraspPose(x=float(position[0]), y=float(position[1]), z=float(position[2]),
                     phi=phi, width=width, quality=g.quality)


# --------------------------------------------------------------------------
# Heatmap rendering
# --------------------------------------------------------------------------

_COLOR_STOPS = ((0.0, (0, 0, 128)), (0.5, (0, 255, 0)), (1.0, (255, 0, 0)))


def heatmap_render(plane: np.ndarray, lo: float, hi: float) -> bytes:
    """Render a plane as a binary PPM (P6, maxval 255) through a fixed
    three-stop colormap: lo -> dark blue, midpoint -> green, hi -> red."""
    if not hi > lo:
        raise DegenerateRange(f"hi {hi} <= lo {lo}")
    t = np.clip((np.asarray(plane, dtype=np.float64) - lo) / (hi - lo), 0.0, 1.0)
    rgb = np.zeros(t.shape + (3,), dtype=np.float64)
    for (t0, c0), (t1, c1) in zip(_COLOR_STOPS[:-1], _COLOR_STOPS[1:]):
        seg = (t >= t0) & (t <= t1)
        f = (t[seg] - t0) / (t1 - t0)
        for ch in range(3):
            rgb[seg, ch] = c0[ch] + f * (c1[ch] - c0[ch])
    data = np.clip(np.rint(rgb), 0, 255).astype(np.uint8)
    h, w = t.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + data.tobytes()
