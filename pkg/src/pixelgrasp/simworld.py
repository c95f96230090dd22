"""Synthetic tabletop world: scene generation, top-down RGBD rendering with
height-dependent depth degradation, an analytic antipodal grasp oracle, the
open-loop controller, and grasp metrics.

Frame conventions. The robot/world frame has z up and the table at
z = table_z. The camera hangs above the workspace center looking straight
down with extrinsic rotation diag(1, -1, -1) (a proper rotation: camera x
aligns with world x, camera y with world -y). Image u therefore maps to
world +x and image v to world -y. Because of this reflection, primitive
`orientation` is stored as the IMAGE-aligned angle of the major axis; the
corresponding world-frame direction is (cos o, -sin o).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .data_ingest import GraspRectangle, RgbdSample
from .errors import EmptyTrials, PlacementFailed
from .grasp_decode import (
    CameraModel,
    GraspPose,
    camera_to_robot,
    grasp_at_pixel,
    image_to_camera,
    local_peaks,
)
from .labels import GraspMaps, rasterize, wrap_half_pi
from .preprocess import NormalizationRange, inpaint_depth, minmax_normalize, rgb_to_grey

BASE_OBSERVATION_HEIGHT = 0.35
DROPOUT_CLAMP = 1.0 - 1e-6

FAIL_NONE = "none"
FAIL_OUT_OF_WORKSPACE = "out_of_workspace"
FAIL_BELOW_TABLE = "below_table"
FAIL_CLOSED_EMPTY = "gripper_closed_empty"

# Flat object colors with luminance far from the table texture (~90 grey),
# so the grey channel keeps contrast for every object index.
PALETTE = (
    (250, 240, 70), (25, 25, 120), (240, 160, 40), (10, 50, 20),
    (255, 255, 255), (25, 25, 25), (180, 230, 240), (120, 20, 20),
)


@dataclass
class Primitive:
    kind: str            # "ellipse" or "rectangle"
    center: tuple[float, float]
    a: float             # half extent along the major axis, a >= b
    b: float
    orientation: float   # image-aligned major-axis angle, radians
    height: float        # meters above the table

    def axes_world(self):
        """(major, minor) unit directions in world xy."""
        mu = -self.orientation
        m = np.array([math.cos(mu), math.sin(mu)])
        n = np.array([-math.sin(mu), math.cos(mu)])
        return m, n


@dataclass
class Scene:
    objects: list[Primitive]
    table_z: float = 0.0
    # xmin, xmax, ymin, ymax, zmin, zmax
    workspace: tuple = (-0.15, 0.15, -0.15, 0.15, 0.0, 0.25)


@dataclass
class SceneParams:
    """Primitive sampling ranges.

    aspect_range bounds b/a. The ground-truth rect's jaw plate spans
    min(2a, 2b) along the major axis, and the oracle's 15-degree antipodal
    tolerance only admits ellipse chords across that whole span when the
    silhouette is elongated (b/a below roughly 0.35), so the default
    aspect ceiling keeps every labeled pixel a valid grasp.
    """

    max_objects: int = 1
    a_range: tuple[float, float] = (0.045, 0.07)
    aspect_range: tuple[float, float] = (0.20, 0.32)
    height_range: tuple[float, float] = (0.02, 0.05)
    kinds: tuple = ("ellipse", "rectangle")
    table_z: float = 0.0
    workspace: tuple = (-0.10, 0.10, -0.10, 0.10, 0.0, 0.25)
    separation: float = 0.01


@dataclass
class ObservationSetup:
    camera: CameraModel
    observation_height: float = BASE_OBSERVATION_HEIGHT
    dropout_base: float = 0.0    # invalid-pixel rate at the base height
    noise_sigma: float = 0.0     # depth noise, meters
    image_side: int = 96

    def __post_init__(self):
        if not 0.0 <= self.dropout_base < 1.0:
            raise ValueError("dropout_base must be in [0, 1)")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass
class OracleConfig:
    w_max: float = 0.10                  # gripper opening limit, meters
    antipodal_tol: float = math.radians(15.0)
    # numerical headroom (1 um) on the chord and height comparisons; the
    # float32 depth plane alone injects ~2e-8 m of quantization
    slack: float = 1e-6


@dataclass
class ControllerConfig:
    channels: str = "rgbd"               # rgbd | greyd | d
    width_scale: float = 1.2             # jaw opening margin over predicted width
    max_retries: int = 1
    smooth_q: bool = False
    oracle: OracleConfig = field(default_factory=OracleConfig)
    # depth normalization window below the camera; (h - span, h)
    depth_span: float = 0.2
    # "not higher than the table" allows float noise from the f32 depth plane
    table_epsilon: float = 1e-6


@dataclass
class TrialResult:
    success: bool
    grasp: GraspPose
    quality: float
    planning_seconds: float
    failure_reason: str = FAIL_NONE

    def __post_init__(self):
        if self.success and self.failure_reason != FAIL_NONE:
            raise ValueError("successful trials carry no failure reason")


@dataclass
class MetricsReport:
    success_rate: float
    robust_grasp_rate: float
    planning_mean_s: float
    planning_median_s: float
    planning_p95_s: float
    trials: int

    def to_dict(self, include_timing: bool = True) -> dict:
        doc = {
            "success_rate": self.success_rate,
            "robust_grasp_rate": self.robust_grasp_rate,
            "trials": self.trials,
        }
        if include_timing:
            doc["planning_seconds"] = {
                "mean": self.planning_mean_s,
                "median": self.planning_median_s,
                "p95": self.planning_p95_s,
            }
        else:
            doc["planning_seconds"] = None
        return doc


# --------------------------------------------------------------------------
# Scene generation
# --------------------------------------------------------------------------

def generate_scene(seed: int, params: SceneParams) -> Scene:
    """Deterministically sample non-overlapping primitives.

    Poses are rejection-sampled against a bounding-circle separation test;
    more than 1000 rejections raises PlacementFailed.
    """
    rng = np.random.default_rng((int(seed), 0xC0FFEE))
    count = 0 if params.max_objects == 0 else int(rng.integers(1, params.max_objects + 1))
    xmin, xmax, ymin, ymax = params.workspace[:4]
    objects: list[Primitive] = []
    rejections = 0
    while len(objects) < count:
        kind = params.kinds[int(rng.integers(0, len(params.kinds)))]
        a = float(rng.uniform(*params.a_range))
        b = a * float(rng.uniform(*params.aspect_range))
        height = float(rng.uniform(*params.height_range))
        theta = float(rng.uniform(-math.pi, math.pi))
        clear = xmin + a <= xmax - a and ymin + a <= ymax - a
        if clear:
            cx = float(rng.uniform(xmin + a, xmax - a))
            cy = float(rng.uniform(ymin + a, ymax - a))
            candidate = Primitive(kind, (cx, cy), a, b, theta, height)
            clear = all(
                math.hypot(cx - o.center[0], cy - o.center[1]) > a + o.a + params.separation
                for o in objects
            )
        if clear:
            objects.append(candidate)
        else:
            rejections += 1
            if rejections > 1000:
                raise PlacementFailed(f"{rejections} rejections placing object {len(objects)}")
    return Scene(objects=objects, table_z=params.table_z, workspace=params.workspace)


# --------------------------------------------------------------------------
# Rendering
# --------------------------------------------------------------------------

def make_topdown_camera(scene: Scene, height: float, side: int,
                        frame_fill: float = 0.85) -> CameraModel:
    """Camera centered above the workspace, intrinsics fixed from the base
    observation height so higher viewpoints shrink the scene in frame."""
    xmin, xmax, ymin, ymax = scene.workspace[:4]
    wx, wy = (xmin + xmax) / 2.0, (ymin + ymax) / 2.0
    half_extent = max(xmax - xmin, ymax - ymin) / 2.0
    f = frame_fill * (side / 2.0) * BASE_OBSERVATION_HEIGHT / half_extent
    extr = np.eye(4)
    extr[:3, :3] = np.diag([1.0, -1.0, -1.0])
    extr[:3, 3] = (wx, wy, scene.table_z + height)
    return CameraModel(fx=f, fy=f, cx=side / 2.0, cy=side / 2.0, t_cam_to_robot=extr)


def make_setup(scene: Scene, height: float = BASE_OBSERVATION_HEIGHT, side: int = 96,
               dropout_base: float = 0.0, noise_sigma: float = 0.0) -> ObservationSetup:
    cam = make_topdown_camera(scene, height, side)
    return ObservationSetup(camera=cam, observation_height=height,
                            dropout_base=dropout_base, noise_sigma=noise_sigma,
                            image_side=side)


def dropout_rate(base: float, height: float) -> float:
    """Invalid-pixel rate grows linearly with observation height, clamped
    strictly below 1."""
    return min(base * (height / BASE_OBSERVATION_HEIGHT), DROPOUT_CLAMP)


def _silhouette_mask(obj: Primitive, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    m, n = obj.axes_world()
    dx = x - obj.center[0]
    dy = y - obj.center[1]
    pm = dx * m[0] + dy * m[1]
    pn = dx * n[0] + dy * n[1]
    if obj.kind == "ellipse":
        return (pm / obj.a) ** 2 + (pn / obj.b) ** 2 <= 1.0
    return (np.abs(pm) <= obj.a) & (np.abs(pn) <= obj.b)


def render(scene: Scene, setup: ObservationSetup, seed: int = 0):
    """Render the scene into an RgbdSample plus ground-truth grasp rects.

    Depth is camera distance: observation height at the table, minus the
    object height inside each silhouette, with Gaussian noise and a
    height-scaled Bernoulli dropout marking pixels invalid. RGB is a flat
    distinct color per object over a checkered table.
    """
    cam = setup.camera
    side = setup.image_side
    h = setup.observation_height
    cols, rows = np.meshgrid(np.arange(side, dtype=np.float64),
                             np.arange(side, dtype=np.float64))
    u = cols + 0.5
    v = rows + 0.5
    camx, camy = cam.t_cam_to_robot[0, 3], cam.t_cam_to_robot[1, 3]

    depth = np.full((side, side), h, dtype=np.float64)
    checker = ((rows.astype(int) // 6 + cols.astype(int) // 6) % 2).astype(np.float32)
    rgb = np.empty((side, side, 3), dtype=np.float32)
    rgb[...] = (82.0 + 20.0 * checker)[..., None]

    gt_rects = []
    for i, obj in enumerate(scene.objects):
        d_obj = h - obj.height
        x = camx + (u - cam.cx) * d_obj / cam.fx
        y = camy - (v - cam.cy) * d_obj / cam.fy
        mask = _silhouette_mask(obj, x, y)
        depth[mask] = np.minimum(depth[mask], d_obj)
        color = PALETTE[i % len(PALETTE)]
        for ch in range(3):
            rgb[..., ch][mask] = color[ch]
        gt_rects.append(ground_truth_rect(obj, scene, setup))

    rng = np.random.default_rng((int(seed), 0x5EED))
    if setup.noise_sigma > 0:
        depth = depth + rng.normal(0.0, setup.noise_sigma, size=depth.shape)
    rate = dropout_rate(setup.dropout_base, h)
    valid = np.ones((side, side), dtype=bool)
    if rate > 0:
        valid = rng.random(depth.shape) >= rate

    sample = RgbdSample(rgb=rgb, depth=depth.astype(np.float32), depth_valid=valid,
                        pos_rects=gt_rects, neg_rects=[])
    return sample, gt_rects


def ground_truth_rect(obj: Primitive, scene: Scene, setup: ObservationSetup) -> GraspRectangle:
    """The analytic grasp annotation: closing across the minor axis at the
    centroid, jaw plates along the major axis."""
    cam = setup.camera
    d_obj = setup.observation_height - obj.height
    camx, camy = cam.t_cam_to_robot[0, 3], cam.t_cam_to_robot[1, 3]
    uc = cam.cx + cam.fx * (obj.center[0] - camx) / d_obj
    vc = cam.cy - cam.fy * (obj.center[1] - camy) / d_obj
    width_px = 2.0 * obj.b * cam.fx / d_obj
    plate_px = min(2.0 * obj.a, 2.0 * obj.b) * cam.fx / d_obj
    axis_angle = obj.orientation + math.pi / 2.0  # minor axis, image frame
    g = np.array([math.cos(axis_angle), math.sin(axis_angle)])
    p = np.array([math.cos(obj.orientation), math.sin(obj.orientation)])
    ctr = np.array([uc, vc])
    half_w = 0.5 * width_px * g
    half_p = 0.5 * plate_px * p
    corners = np.array([
        ctr - half_w - half_p,
        ctr - half_w + half_p,
        ctr + half_w + half_p,
        ctr + half_w - half_p,
    ])
    return GraspRectangle(corners)


# --------------------------------------------------------------------------
# Antipodal oracle
# --------------------------------------------------------------------------

def _chord_and_normals(obj: Primitive, point, phi_world: float):
    """Silhouette chord through `point` along the world direction phi.

    Returns (length, n1, n2) with unit outward normals at the endpoints,
    or None when the point is outside the silhouette.
    """
    m, n = obj.axes_world()
    q = np.array([point[0] - obj.center[0], point[1] - obj.center[1]])
    ql = np.array([q @ m, q @ n])
    d_world = np.array([math.cos(phi_world), math.sin(phi_world)])
    dl = np.array([d_world @ m, d_world @ n])

    if obj.kind == "ellipse":
        if (ql[0] / obj.a) ** 2 + (ql[1] / obj.b) ** 2 > 1.0 + 1e-12:
            return None
        aa = (dl[0] / obj.a) ** 2 + (dl[1] / obj.b) ** 2
        bb = 2.0 * (ql[0] * dl[0] / obj.a ** 2 + ql[1] * dl[1] / obj.b ** 2)
        cc = (ql[0] / obj.a) ** 2 + (ql[1] / obj.b) ** 2 - 1.0
        disc = bb * bb - 4.0 * aa * cc
        if disc < 0:
            return None
        root = math.sqrt(disc)
        t1, t2 = (-bb - root) / (2 * aa), (-bb + root) / (2 * aa)
        normals = []
        for t in (t1, t2):
            e = ql + t * dl
            grad = np.array([e[0] / obj.a ** 2, e[1] / obj.b ** 2])
            grad /= np.linalg.norm(grad)
            normals.append(grad[0] * m + grad[1] * n)
        return t2 - t1, normals[0], normals[1]

    # rectangle: slab intersection in the local frame
    if abs(ql[0]) > obj.a + 1e-12 or abs(ql[1]) > obj.b + 1e-12:
        return None
    t_lo, t_hi = -math.inf, math.inf
    axis_lo = axis_hi = 0
    for axis, half in ((0, obj.a), (1, obj.b)):
        if abs(dl[axis]) < 1e-15:
            if abs(ql[axis]) > half:
                return None
            continue
        t_a = (-half - ql[axis]) / dl[axis]
        t_b = (half - ql[axis]) / dl[axis]
        lo, hi = min(t_a, t_b), max(t_a, t_b)
        if lo > t_lo:
            t_lo, axis_lo = lo, axis
        if hi < t_hi:
            t_hi, axis_hi = hi, axis
    if t_lo > t_hi:
        return None
    local_normals = []
    for t, axis in ((t_lo, axis_lo), (t_hi, axis_hi)):
        e = ql + t * dl
        sign = 1.0 if e[axis] > 0 else -1.0
        ln = np.zeros(2)
        ln[axis] = sign
        local_normals.append(ln)
    n1 = local_normals[0][0] * m + local_normals[0][1] * n
    n2 = local_normals[1][0] * m + local_normals[1][1] * n
    return t_hi - t_lo, n1, n2


def oracle_grasp(scene: Scene, grasp: GraspPose, oracle: OracleConfig | None = None) -> bool:
    """Analytic stand-in for the physical jaws-closed test.

    Success requires: the grasp center inside some silhouette; the chord
    through it along the grasp axis no longer than the commanded opening,
    which itself respects the gripper limit; near-antipodal contact
    normals; and a grasp height within the object's extent.
    """
    oracle = oracle or OracleConfig()
    if not all(math.isfinite(val) for val in (grasp.x, grasp.y, grasp.z, grasp.phi, grasp.width)):
        return False
    for obj in scene.objects:
        hit = _chord_and_normals(obj, (grasp.x, grasp.y), grasp.phi)
        if hit is None:
            continue
        chord, n1, n2 = hit
        if chord > grasp.width + oracle.slack:
            return False
        if grasp.width > oracle.w_max + oracle.slack:
            return False
        cos_opposed = float(np.clip(-(n1 @ n2), -1.0, 1.0))
        if math.acos(cos_opposed) > oracle.antipodal_tol:
            return False
        if not scene.table_z - oracle.slack <= grasp.z <= scene.table_z + obj.height + oracle.slack:
            return False
        return True
    return False


# --------------------------------------------------------------------------
# Predictors and the open-loop controller
# --------------------------------------------------------------------------

def assemble_input(sample: RgbdSample, channels: str, depth_range: NormalizationRange):
    """Inpaint and normalize one frame into network input planes.

    Returns (planes (C, H, W) float32, dense metric depth (H, W)).
    """
    invalid = ~sample.depth_valid
    dense = inpaint_depth(sample.depth, invalid) if invalid.any() else sample.depth
    dn = minmax_normalize(dense, depth_range)
    if channels == "d":
        planes = dn[None]
    elif channels == "greyd":
        grey = rgb_to_grey(sample.rgb) / 255.0
        planes = np.stack([grey, dn])
    elif channels == "rgbd":
        rgbn = sample.rgb.transpose(2, 0, 1) / 255.0
        planes = np.concatenate([rgbn, dn[None]], axis=0)
    else:
        raise ValueError(f"unknown channel mode {channels!r}")
    return planes.astype(np.float32), np.asarray(dense, dtype=np.float64)


def channels_for(in_channels: int) -> str:
    return {1: "d", 2: "greyd", 4: "rgbd"}[in_channels]


class NetPredictor:
    """Runs the trained network on assembled input planes."""

    def __init__(self, net):
        self.net = net
        self.channels = channels_for(net.config.in_channels)

    def predict(self, planes: np.ndarray, gt_rects=None) -> GraspMaps:
        return self.net.predict(planes)


class GroundTruthPredictor:
    """Harness stub: emits the rasterized ground-truth label maps."""

    def __init__(self, channels: str = "rgbd"):
        self.channels = channels

    def predict(self, planes: np.ndarray, gt_rects=None) -> GraspMaps:
        h, w = planes.shape[-2:]
        return rasterize(gt_rects or [], h, w)


def depth_norm_range(setup: ObservationSetup, span: float = 0.2) -> NormalizationRange:
    h = setup.observation_height
    return NormalizationRange(h - span, h)


def run_episode(predictor, scene: Scene, setup: ObservationSetup,
                ctrl: ControllerConfig | None = None, seed: int = 0) -> TrialResult:
    """One open-loop trial: render, predict, decode the best grasp, validate
    workspace and table-height constraints (retrying once from the next
    quality peak), then score against the analytic oracle.

    planning_seconds covers raw-frame-received to pose-produced.
    """
    if ctrl is None:
        ctrl = ControllerConfig(channels=getattr(predictor, "channels", "rgbd"))
    sample, gt_rects = render(scene, setup, seed=seed)

    t0 = time.perf_counter()
    planes, dense_depth = assemble_input(sample, ctrl.channels,
                                         depth_norm_range(setup, ctrl.depth_span))
    maps = predictor.predict(planes, gt_rects=gt_rects)
    q_plane = _box3_if(maps.q, ctrl.smooth_q)
    peaks = local_peaks(q_plane)

    xmin, xmax, ymin, ymax, zmin, zmax = scene.workspace
    last_pose = None
    last_reason = FAIL_CLOSED_EMPTY
    for u, v in peaks[:ctrl.max_retries + 1]:
        g = grasp_at_pixel(maps, u, v)
        d = float(dense_depth[v, u])
        point = image_to_camera(u + 0.5, v + 0.5, d, setup.camera)
        position, phi, width = camera_to_robot(point, g.phi, g.width_px, d, setup.camera)
        # command the jaws wider than predicted, capped at the physical limit
        commanded = min(width * ctrl.width_scale, ctrl.oracle.w_max)
        pose = GraspPose(x=float(position[0]), y=float(position[1]), z=float(position[2]),
                         phi=phi, width=commanded, quality=g.quality)
        last_pose = pose
        if not (xmin <= pose.x <= xmax and ymin <= pose.y <= ymax and pose.z <= zmax):
            last_reason = FAIL_OUT_OF_WORKSPACE
            continue
        if pose.z <= scene.table_z + ctrl.table_epsilon:
            last_reason = FAIL_BELOW_TABLE
            continue
        planning = time.perf_counter() - t0
        ok = oracle_grasp(scene, pose, ctrl.oracle)
        return TrialResult(success=ok, grasp=pose, quality=pose.quality,
                           planning_seconds=planning,
                           failure_reason=FAIL_NONE if ok else FAIL_CLOSED_EMPTY)
    planning = time.perf_counter() - t0
    if last_pose is None:
        last_pose = GraspPose(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    return TrialResult(success=False, grasp=last_pose, quality=last_pose.quality,
                       planning_seconds=planning, failure_reason=last_reason)


def _box3_if(q: np.ndarray, smooth: bool) -> np.ndarray:
    if not smooth:
        return q
    from .grasp_decode import _box3
    return _box3(np.asarray(q, dtype=np.float64))


def metrics(trials: list[TrialResult]) -> MetricsReport:
    """Success rate, robust grasp rate (successes with predicted quality
    strictly above 0.5, over all runs) and planning-time statistics."""
    if not trials:
        raise EmptyTrials("no trials to aggregate")
    total = len(trials)
    successes = sum(t.success for t in trials)
    robust = sum(t.success and t.quality > 0.5 for t in trials)
    times = np.array([t.planning_seconds for t in trials], dtype=np.float64)
    return MetricsReport(
        success_rate=successes / total,
        robust_grasp_rate=robust / total,
        planning_mean_s=float(times.mean()),
        planning_median_s=float(np.median(times)),
        planning_p95_s=float(np.percentile(times, 95)),
        trials=total,
    )


def evaluate_scenes(predictor, scene_seeds, params: SceneParams, height: float,
                    side: int = 96, dropout_base: float = 0.0, noise_sigma: float = 0.0,
                    ctrl: ControllerConfig | None = None):
    """Run one episode per scene seed; returns (report, trials)."""
    trials = []
    for s in scene_seeds:
        scene = generate_scene(s, params)
        setup = make_setup(scene, height=height, side=side,
                           dropout_base=dropout_base, noise_sigma=noise_sigma)
        trials.append(run_episode(predictor, scene, setup, ctrl=ctrl, seed=s))
    return metrics(trials), trials


def scene_training_pair(scene: Scene, setup: ObservationSetup, channels: str,
                        seed: int = 0, depth_span: float = 0.2):
    """Render one scene into a (input planes, label stack) training pair."""
    sample, gt_rects = render(scene, setup, seed=seed)
    planes, _ = assemble_input(sample, channels, depth_norm_range(setup, depth_span))
    maps = rasterize(gt_rects, setup.image_side, setup.image_side)
    return planes, maps.stack()
