"""Conversion of grasp rectangles into per-pixel training targets.

A label stack holds four planes: grasp probability q in {0, 1}, the
doubled-angle encoding (cos 2phi, sin 2phi) and the jaw opening width
normalized by WIDTH_NORM pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data_ingest import GraspRectangle
from .errors import DegenerateRect

# Largest jaw opening in the annotation set, used to normalize widths into [0, 1].
WIDTH_NORM = 150.0


@dataclass
class GraspMaps:
    q: np.ndarray
    cos2phi: np.ndarray
    sin2phi: np.ndarray
    w: np.ndarray

    def stack(self) -> np.ndarray:
        """(4, H, W) plane stack in (q, cos2phi, sin2phi, w) order."""
        return np.stack([self.q, self.cos2phi, self.sin2phi, self.w]).astype(np.float32)

    @classmethod
    def from_stack(cls, planes: np.ndarray) -> "GraspMaps":
        q, c, s, w = planes
        return cls(q=q, cos2phi=c, sin2phi=s, w=w)

    @property
    def shape(self):
        return self.q.shape


def wrap_half_pi(angle: float) -> float:
    """Wrap an orientation (defined modulo pi) into [-pi/2, pi/2)."""
    return (angle + math.pi / 2.0) % math.pi - math.pi / 2.0


def rect_angle(rect: GraspRectangle) -> float:
    """Orientation of the grasp (closing) axis, perpendicular to the jaw
    plate edge corners[0] -> corners[1], wrapped into [-pi/2, pi/2)."""
    c = rect.corners
    edge = c[1] - c[0]
    if np.hypot(edge[0], edge[1]) < 1e-12:
        raise DegenerateRect("zero-length jaw plate edge")
    return wrap_half_pi(math.atan2(edge[1], edge[0]) + math.pi / 2.0)


def rect_width(rect: GraspRectangle) -> float:
    """Extent along the grasp axis (jaw separation), in pixels."""
    c = rect.corners
    width = np.hypot(*(c[2] - c[1]))
    if width < 1e-12:
        raise DegenerateRect("zero-length grasp axis edge")
    return float(width)


def encode_angle(phi: float) -> tuple[float, float]:
    """Doubled-angle unit-circle encoding (cos 2phi, sin 2phi); pi-periodic,
    so the +-pi/2 wraparound maps to a single point."""
    return math.cos(2.0 * phi), math.sin(2.0 * phi)


def middle_third_polygon(rect: GraspRectangle) -> np.ndarray:
    """The sub-rectangle spanning the middle third of the rect extent along
    the grasp axis and the full jaw-plate extent, as (4, 2) corners."""
    c = rect.corners
    if np.hypot(*(c[1] - c[0])) < 1e-12 or np.hypot(*(c[2] - c[1])) < 1e-12:
        raise DegenerateRect("zero-length edge")

    def lerp(t, s):
        # bilinear point: s along the jaw plate, t along the grasp axis
        top = (1.0 - s) * c[0] + s * c[1]
        bot = (1.0 - s) * c[3] + s * c[2]
        return (1.0 - t) * top + t * bot

    third = 1.0 / 3.0
    return np.array([
        lerp(third, 0.0), lerp(third, 1.0),
        lerp(2 * third, 1.0), lerp(2 * third, 0.0),
    ])


def points_in_convex_polygon(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Inclusive inside test for (N, 2) points against a convex polygon."""
    poly = np.asarray(poly, dtype=np.float64)
    area2 = 0.0
    for i in range(len(poly)):
        a, b = poly[i], poly[(i + 1) % len(poly)]
        area2 += a[0] * b[1] - b[0] * a[1]
    if area2 < 0:
        poly = poly[::-1]
    inside = np.ones(len(points), dtype=bool)
    for i in range(len(poly)):
        a, b = poly[i], poly[(i + 1) % len(poly)]
        cross = (b[0] - a[0]) * (points[:, 1] - a[1]) - (b[1] - a[1]) * (points[:, 0] - a[0])
        inside &= cross >= -1e-9
    return inside


def rect_to_mask(rect: GraspRectangle, height: int, width: int) -> np.ndarray:
    """Rasterize the middle-third region by pixel-center-inside test."""
    poly = middle_third_polygon(rect)
    mask = np.zeros((height, width), dtype=bool)
    c_lo = max(int(np.floor(poly[:, 0].min() - 0.5)), 0)
    c_hi = min(int(np.ceil(poly[:, 0].max() + 0.5)), width - 1)
    r_lo = max(int(np.floor(poly[:, 1].min() - 0.5)), 0)
    r_hi = min(int(np.ceil(poly[:, 1].max() + 0.5)), height - 1)
    if c_lo > c_hi or r_lo > r_hi:
        return mask
    cols, rows = np.meshgrid(np.arange(c_lo, c_hi + 1), np.arange(r_lo, r_hi + 1))
    centers = np.stack([cols.ravel() + 0.5, rows.ravel() + 0.5], axis=-1)
    inside = points_in_convex_polygon(centers, poly)
    mask[rows.ravel()[inside], cols.ravel()[inside]] = True
    return mask


def rasterize(pos_rects: list[GraspRectangle], height: int, width: int) -> GraspMaps:
    """Paint each positive rect's mask with its angle encoding and
    normalized width; later rectangles overwrite earlier ones on overlap."""
    q = np.zeros((height, width), dtype=np.float32)
    cos2 = np.zeros((height, width), dtype=np.float32)
    sin2 = np.zeros((height, width), dtype=np.float32)
    w = np.zeros((height, width), dtype=np.float32)
    for rect in pos_rects:
        mask = rect_to_mask(rect, height, width)
        if not mask.any():
            continue
        c, s = encode_angle(rect_angle(rect))
        q[mask] = 1.0
        cos2[mask] = c
        sin2[mask] = s
        w[mask] = min(rect_width(rect) / WIDTH_NORM, 1.0)
    return GraspMaps(q=q, cos2phi=cos2, sin2phi=sin2, w=w)
