"""Depth inpainting, normalization, grey conversion, resize and
label-consistent augmentation.

Image convention used throughout: planes are (H, W) row-major arrays,
points are (u, v) with u = column and v = row, and the pixel at
(row r, col c) covers [c, c+1) x [r, r+1) with its center at
(c + 0.5, r + 0.5). The image center is therefore (W/2, H/2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data_ingest import GraspRectangle, RgbdSample
from .errors import AllPixelsInvalid, DegenerateRange, ImageTooSmall

GREY_WEIGHTS = (0.299, 0.587, 0.114)  # ITU-R BT.601 luminance


@dataclass(frozen=True)
class NormalizationRange:
    min: float
    max: float

    def __post_init__(self):
        if not self.max > self.min:
            raise DegenerateRange(f"max {self.max} <= min {self.min}")


RGB_RANGE = NormalizationRange(0.0, 255.0)
# Sensor-typical depth scale; overridable per run config.
DEFAULT_DEPTH_RANGE = NormalizationRange(20.0, 120.0)


@dataclass
class AugmentParams:
    """One augmentation draw: rotate about the image center, scale about
    the center, translate, then crop (u0, v0, side). crop side None keeps
    the full frame."""

    rotation: float = 0.0
    translation: tuple[float, float] = (0.0, 0.0)
    crop: tuple[float, float, int | None] = (0.0, 0.0, None)
    scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        side = self.crop[2]
        if side is not None and side <= 0:
            raise ValueError("crop side must be positive")


def inpaint_depth(depth: np.ndarray, invalid_mask: np.ndarray) -> np.ndarray:
    """Fill invalid pixels by iterative 4-neighbor averaging.

    Each pass fills every hole pixel adjacent to at least one pixel that
    was valid before the pass began (frontier fill), so the result does
    not depend on traversal order. Valid input pixels are returned
    unchanged.
    """
    invalid = np.asarray(invalid_mask, dtype=bool)
    if invalid.all():
        raise AllPixelsInvalid("no valid depth pixel to propagate from")
    out = np.array(depth, dtype=np.float64)
    valid = ~invalid
    out[~valid] = 0.0
    while not valid.all():
        sums = np.zeros_like(out)
        counts = np.zeros_like(out)
        for axis, shift in ((0, 1), (0, -1), (1, 1), (1, -1)):
            v = np.roll(valid, shift, axis=axis)
            d = np.roll(out, shift, axis=axis)
            # roll wraps around; zero out the wrapped edge
            edge = [slice(None), slice(None)]
            edge[axis] = 0 if shift == 1 else -1
            v = v.copy()
            v[tuple(edge)] = False
            sums += np.where(v, d, 0.0)
            counts += v
        frontier = (~valid) & (counts > 0)
        out[frontier] = sums[frontier] / counts[frontier]
        valid = valid | frontier
    return out.astype(np.asarray(depth).dtype, copy=False)


def minmax_normalize(plane: np.ndarray, rng: NormalizationRange) -> np.ndarray:
    """(X - min) / (max - min), clamped into [0, 1]."""
    if not rng.max > rng.min:
        raise DegenerateRange(f"max {rng.max} <= min {rng.min}")
    scaled = (np.asarray(plane, dtype=np.float32) - rng.min) / (rng.max - rng.min)
    return np.clip(scaled, 0.0, 1.0)


def rgb_to_grey(rgb: np.ndarray) -> np.ndarray:
    """BT.601 luminance, kept as floating point (no rounding)."""
    rgb = np.asarray(rgb, dtype=np.float32)
    r, g, b = GREY_WEIGHTS
    return r * rgb[..., 0] + g * rgb[..., 1] + b * rgb[..., 2]


# --------------------------------------------------------------------------
# Geometry helpers
# --------------------------------------------------------------------------

def bilinear_sample(plane: np.ndarray, u: np.ndarray, v: np.ndarray):
    """Sample plane at points (u, v); returns (values, inside).

    Points inside the image rect [0, W] x [0, H] interpolate between the
    four surrounding pixel centers (border-replicated at the edges);
    points outside return 0 with inside=False.
    """
    h, w = plane.shape
    inside = (u >= 0) & (u <= w) & (v >= 0) & (v <= h)
    cu = np.clip(u - 0.5, 0.0, w - 1.0)
    cv = np.clip(v - 0.5, 0.0, h - 1.0)
    c0 = np.floor(cu).astype(np.int64)
    r0 = np.floor(cv).astype(np.int64)
    c1 = np.minimum(c0 + 1, w - 1)
    r1 = np.minimum(r0 + 1, h - 1)
    fu = cu - c0
    fv = cv - r0
    p = np.asarray(plane, dtype=np.float64)
    top = p[r0, c0] * (1.0 - fu) + p[r0, c1] * fu
    bot = p[r1, c0] * (1.0 - fu) + p[r1, c1] * fu
    vals = top * (1.0 - fv) + bot * fv
    return np.where(inside, vals, 0.0), inside


def _augment_matrices(params: AugmentParams, h: int, w: int):
    """Forward 2x2 matrix + offset for p' = A @ (p - ctr) + ctr + t - crop0."""
    cos_t, sin_t = math.cos(params.rotation), math.sin(params.rotation)
    a = params.scale * np.array([[cos_t, -sin_t], [sin_t, cos_t]])
    ctr = np.array([w / 2.0, h / 2.0])
    off = ctr + np.asarray(params.translation, dtype=np.float64)
    off = off - np.asarray(params.crop[:2], dtype=np.float64)
    return a, ctr, off


def transform_points(points: np.ndarray, params: AugmentParams, h: int, w: int):
    """Apply the augmentation transform to (N, 2) points in (u, v)."""
    a, ctr, off = _augment_matrices(params, h, w)
    pts = np.asarray(points, dtype=np.float64)
    return (pts - ctr) @ a.T + off


def warp_plane(plane: np.ndarray, params: AugmentParams, h_out=None, w_out=None):
    """Warp a plane by the augmentation transform (inverse-map bilinear).

    Returns (warped, inside) where inside marks output pixels whose
    source point fell within the input frame.
    """
    h, w = plane.shape
    side = params.crop[2]
    if h_out is None:
        h_out = side if side is not None else h
    if w_out is None:
        w_out = side if side is not None else w
    a, ctr, off = _augment_matrices(params, h, w)
    inv = np.linalg.inv(a)
    cols, rows = np.meshgrid(np.arange(w_out), np.arange(h_out))
    q = np.stack([cols + 0.5, rows + 0.5], axis=-1).reshape(-1, 2)
    src = (q - off) @ inv.T + ctr
    vals, inside = bilinear_sample(plane, src[:, 0], src[:, 1])
    return vals.reshape(h_out, w_out), inside.reshape(h_out, w_out)


def center_crop_resize(sample: RgbdSample, side: int = 304) -> RgbdSample:
    """Largest centered square crop, then bilinear resize to side x side,
    with rectangle corners mapped through the same affine transform."""
    h, w = sample.depth.shape
    crop = min(h, w)
    if crop < side:
        raise ImageTooSmall(f"{h}x{w} cannot produce a {side}x{side} crop")
    u0 = (w - crop) / 2.0
    v0 = (h - crop) / 2.0
    s = side / crop

    def map_pts(pts):
        return (np.asarray(pts, dtype=np.float64) - (u0, v0)) * s

    cols, rows = np.meshgrid(np.arange(side), np.arange(side))
    su = (cols + 0.5) / s + u0
    sv = (rows + 0.5) / s + v0

    def resample(plane):
        vals, _ = bilinear_sample(plane, su.ravel(), sv.ravel())
        return vals.reshape(side, side).astype(np.float32)

    rgb = np.stack([resample(sample.rgb[..., c]) for c in range(3)], axis=-1)
    depth = resample(sample.depth)
    vmask, _ = bilinear_sample(sample.depth_valid.astype(np.float64), su.ravel(), sv.ravel())
    valid = vmask.reshape(side, side) >= 0.999

    def keep(rect):
        c = map_pts(rect.corners)
        return np.all((c[:, 0] >= 0) & (c[:, 0] <= side) & (c[:, 1] >= 0) & (c[:, 1] <= side))

    pos = [r.transformed(map_pts) for r in sample.pos_rects if keep(r)]
    neg = [r.transformed(map_pts) for r in sample.neg_rects if keep(r)]
    return RgbdSample(rgb=rgb, depth=depth, depth_valid=valid, pos_rects=pos, neg_rects=neg)


def augment(sample: RgbdSample, params: AugmentParams) -> RgbdSample:
    """Warp image planes and rectangles by the same rigid+scale transform.

    Out-of-frame pixels become invalid for depth and zero for RGB;
    rectangles with any corner out of the output frame are dropped
    (clipping would corrupt width semantics).
    """
    h, w = sample.depth.shape
    side = params.crop[2]
    h_out = side if side is not None else h
    w_out = side if side is not None else w

    rgb = np.empty((h_out, w_out, 3), dtype=np.float32)
    for c in range(3):
        plane, _ = warp_plane(sample.rgb[..., c], params)
        rgb[..., c] = plane
    depth, inside = warp_plane(sample.depth, params)
    vmask, _ = warp_plane(sample.depth_valid.astype(np.float64), params)
    valid = inside & (vmask >= 0.999)

    def mapped(rects):
        out = []
        for r in rects:
            c = transform_points(r.corners, params, h, w)
            if np.all((c[:, 0] >= 0) & (c[:, 0] <= w_out) & (c[:, 1] >= 0) & (c[:, 1] <= h_out)):
                out.append(GraspRectangle(c))
        return out

    return RgbdSample(
        rgb=rgb,
        depth=depth.astype(np.float32),
        depth_valid=valid,
        pos_rects=mapped(sample.pos_rects),
        neg_rects=mapped(sample.neg_rects),
    )


def sample_augment_params(global_seed: int, sample_id: int, *, max_rotation=math.pi,
                          max_translation=0.0, scale_jitter=0.0,
                          crop_jitter=0.0) -> AugmentParams:
    """Deterministic per-sample augmentation draw keyed by (seed, id), so
    batch workers produce identical results regardless of scheduling.

    crop_jitter shifts the output window by up to that many pixels in u
    and v (a same-size random crop)."""
    rng = np.random.default_rng((global_seed, sample_id))
    rot = rng.uniform(-max_rotation, max_rotation)
    trans = tuple(rng.uniform(-max_translation, max_translation, size=2))
    scale = 1.0 + rng.uniform(-scale_jitter, scale_jitter)
    crop = (rng.uniform(-crop_jitter, crop_jitter),
            rng.uniform(-crop_jitter, crop_jitter), None) if crop_jitter else (0.0, 0.0, None)
    return AugmentParams(rotation=rot, translation=trans, crop=crop,
                         scale=scale, seed=sample_id)
