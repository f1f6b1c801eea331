"""Procedural two-frame multi-camera scenes with exact ground truth.

Objects are opaque oriented cuboids standing on the ground plane of the ego
frame (x forward, y left, z up).  The ego frame at time T doubles as the
world frame; objects are static, so frame T-1 differs only by ego motion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .config import CATEGORIES, DEFAULT_SIZES, ExperimentConfig
from .geometry import Intrinsics, RigidTransform, pixel_grid, rotation_z, unproject

FRAME_T = "T"
FRAME_TM1 = "T-1"



class SceneError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SceneObject:
    category: str
    center: np.ndarray
    size: tuple
    yaw: float

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise SceneError(f"unknown category {self.category!r}")
        if min(self.size) <= 0:
            raise SceneError("object size must be positive")

    @property
    def rotation(self) -> np.ndarray:
        return rotation_z(self.yaw)

    @property
    def half(self) -> np.ndarray:
        return 0.5 * np.asarray(self.size, dtype=np.float64)

    def corners(self) -> np.ndarray:
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
        return (signs * self.half) @ self.rotation.T + self.center

    def footprint(self) -> np.ndarray:
        """BEV footprint polygon (4, 2) in the world frame."""
        h = self.half
        local = np.array([[h[0], h[1]], [-h[0], h[1]], [-h[0], -h[1]], [h[0], -h[1]]])
        r = self.rotation[:2, :2]
        return local @ r.T + self.center[:2]


@dataclass(frozen=True, eq=False)
class CameraRig:
    name: str
    intrinsics: Intrinsics
    pose_T: RigidTransform  # world -> camera at T
    ego_motion: RigidTransform  # camera at T -> camera at T-1

    @property
    def pose_Tm1(self) -> RigidTransform:
        return self.ego_motion.compose(self.pose_T)

    def pose(self, frame: str) -> RigidTransform:
        if frame == FRAME_T:
            return self.pose_T
        if frame == FRAME_TM1:
            return self.pose_Tm1
        raise SceneError(f"unknown frame {frame!r}")


@dataclass
class Scene:
    objects: list
    rigs: list
    seed: int

    def __post_init__(self):
        if not self.rigs:
            raise SceneError("a scene needs at least one camera rig")


@dataclass
class InstanceMask:
    instance_id: int
    category: str
    pixels: np.ndarray  # (n, 2) integer (u, v)
    box: tuple  # normalized (height, width)
    box_px: tuple  # (u_min, v_min, u_max, v_max), inclusive

    @property
    def height_px(self) -> int:
        return int(self.box_px[3] - self.box_px[1] + 1)


@dataclass
class Render:
    depth: np.ndarray  # (H, W), inf on background
    owner: np.ndarray  # (H, W), -1 on background
    masks: list

    @property
    def foreground(self) -> np.ndarray:
        return self.owner >= 0


@dataclass
class SparseGroundTruth:
    """Per-instance LiDAR-like samples: ``{instance_id: (pixels (n, 2), depths (n,))}``."""

    samples: dict = field(default_factory=dict)
    outliers: dict = field(default_factory=dict)  # instance_id -> bool mask


def camera_rotation(yaw: float) -> np.ndarray:
    """ego -> camera rotation for a horizontal camera facing ``yaw``."""
    c, s = math.cos(yaw), math.sin(yaw)
    z_axis = [c, s, 0.0]
    x_axis = [s, -c, 0.0]
    y_axis = [0.0, 0.0, -1.0]
    return np.array([x_axis, y_axis, z_axis])


def build_rigs(cfg: ExperimentConfig) -> list:
    em = cfg.ego_motion
    # ego(T-1) pose in ego(T); a static world point maps ego(T) -> ego(T-1) by its inverse
    ego_tm1_in_t = RigidTransform(rotation_z(math.radians(em.yaw_deg)), np.asarray(em.translation, float))
    ego_t_to_tm1 = ego_tm1_in_t.inverse()
    rigs = []
    for cam in cfg.cameras:
        ic = cam.intrinsics
        k = Intrinsics(ic.fx, ic.fy, ic.cx, ic.cy, ic.width, ic.height)
        r = camera_rotation(math.radians(cam.yaw_deg))
        pos = np.asarray(cam.position, dtype=np.float64)
        cam_from_ego = RigidTransform(r, -r @ pos)
        motion = cam_from_ego.compose(ego_t_to_tm1).compose(cam_from_ego.inverse())
        rigs.append(CameraRig(cam.name, k, cam_from_ego, motion))
    return rigs


def generate_scene(cfg: ExperimentConfig, seed: int) -> Scene:
    """Place objects deterministically for ``(cfg, seed)``."""
    rng = np.random.default_rng(seed)
    rigs = build_rigs(cfg)
    sizes = {**DEFAULT_SIZES, **{k: tuple(v) for k, v in cfg.scene.sizes.items()}}
    sc = cfg.scene
    objects: list = []

    def place(category, cam_idx, depth, lateral, yaw):
        rig = rigs[cam_idx]
        size = sizes[category]
        ego_from_cam = rig.pose_T.inverse()
        p = ego_from_cam.apply(np.array([lateral, 0.0, depth]))
        center = np.array([p[0], p[1], size[2] / 2.0])
        return SceneObject(category, center, size, yaw)

    def fits(obj):
        if np.abs(obj.center[:2]).max() > sc.world_extent:
            return False
        r = 0.5 * math.hypot(obj.size[0], obj.size[1])
        for other in objects:
            r2 = 0.5 * math.hypot(other.size[0], other.size[1])
            if np.linalg.norm(obj.center[:2] - other.center[:2]) < r + r2 + 0.5:
                return False
        return True

    for spec in sc.objects:
        obj = place(spec.category, spec.camera, spec.depth, spec.lateral, math.radians(spec.yaw_deg))
        if not fits(obj):
            raise SceneError(f"explicit {spec.category} at depth {spec.depth} does not fit")
        objects.append(obj)

    lo, hi = sc.depth_range
    for category in CATEGORIES:
        for _ in range(int(sc.counts.get(category, 0))):
            for _attempt in range(sc.max_retries):
                cam_idx = int(rng.integers(len(rigs)))
                k = rigs[cam_idx].intrinsics
                depth = float(rng.uniform(lo, hi))
                half_fov = min(k.cx, k.width - 1 - k.cx) / k.fx
                lateral = float(rng.uniform(-0.6, 0.6)) * depth * half_fov
                yaw = float(rng.uniform(-math.pi, math.pi))
                obj = place(category, cam_idx, depth, lateral, yaw)
                if fits(obj):
                    objects.append(obj)
                    break
            else:
                raise SceneError(
                    f"could not place a {category} after {sc.max_retries} attempts"
                )
    return Scene(objects, rigs, seed)


def _camera_boxes(objects, pose: RigidTransform):
    """Per-object (camera origin in box frame, box->camera rotation, half extents)."""
    n = len(objects)
    origins = np.zeros((n, 3))
    axes = np.zeros((n, 3, 3))
    half = np.zeros((n, 3))
    for i, obj in enumerate(objects):
        rot = pose.rotation @ obj.rotation
        center = pose.apply(obj.center)
        axes[i] = rot
        origins[i] = rot.T @ (-center)
        half[i] = obj.half
    return origins, axes, half


def render(scene: Scene, rig: CameraRig, frame: str = FRAME_T) -> Render:
    """Analytic z-depth and instance ownership for every pixel."""
    k = rig.intrinsics
    uv = pixel_grid(k)
    rx = (uv[:, 0] - k.cx) / k.fx
    ry = (uv[:, 1] - k.cy) / k.fy
    origins, axes, half = _camera_boxes(scene.objects, rig.pose(frame))
    depth, owner = kernels.ray_box_depth(rx, ry, origins, axes, half)
    depth = depth.reshape(k.height, k.width)
    owner = owner.reshape(k.height, k.width)
    return Render(depth, owner, instance_masks(owner, scene))


def instance_masks(owner: np.ndarray, scene: Scene) -> list:
    h, w = owner.shape
    masks = []
    for i in np.unique(owner[owner >= 0]):
        vv, uu = np.nonzero(owner == i)
        box_px = (int(uu.min()), int(vv.min()), int(uu.max()), int(vv.max()))
        box = ((box_px[3] - box_px[1] + 1) / h, (box_px[2] - box_px[0] + 1) / w)
        pixels = np.stack([uu, vv], axis=-1).astype(np.int64)
        masks.append(InstanceMask(int(i), scene.objects[i].category, pixels, box, box_px))
    return masks


def _chi3_quantile(q: float) -> float:
    """Inverse CDF of the chi distribution with 3 degrees of freedom."""
    lo, hi = 0.0, 12.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        cdf = math.erf(mid / math.sqrt(2.0)) - math.sqrt(2.0 / math.pi) * mid * math.exp(-0.5 * mid * mid)
        lo, hi = (mid, hi) if cdf < q else (lo, mid)
    return 0.5 * (lo + hi)


def _sphere_points(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(1.0 - z * z)
    phi = np.pi * (1.0 + math.sqrt(5.0)) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


class Embedding:
    """Deterministic smooth embedding of world points.

    Cosine/sine pairs over a quasi-random set of 3D frequencies whose
    magnitudes follow the quantiles of a Gaussian spectrum of width
    ``1 / scale``.  The squared feature distance between two points then
    approximates ``energy * (1 - exp(-|offset|^2 / (2 scale^2)))``: zero for
    the same point, growing smoothly with the offset and saturating beyond a
    few ``scale``.  It depends only on the offset, so true correspondences
    match exactly.
    """

    def __init__(self, channels: int = 32, scale: float = 0.3, energy: float = 256.0):
        if channels < 1 or not scale > 0 or not energy > 0:
            raise SceneError("embedding needs channels >= 1 and positive scale and energy")
        n = (channels + 1) // 2
        self.channels = channels
        radius = np.array([_chi3_quantile((i + 0.5) / n) for i in range(n)]) / scale
        # stride the direction order so radius and polar angle decorrelate
        order = (np.arange(n) * 7) % n if math.gcd(n, 7) == 1 else np.arange(n)
        self.omega = _sphere_points(n)[order] * radius[:, None]
        self.amplitude = math.sqrt(energy / (2 * n))

    @property
    def background(self) -> np.ndarray:
        """Designated background feature.

        A constant vector of norm ``2 sqrt(energy)``.  Object features have
        norm ``sqrt(energy / 2)``, so background stays at least
        ``(2 - 1/sqrt(2)) sqrt(energy)`` from any object feature, beyond the
        saturated distance ``sqrt(energy)`` between unrelated object points.
        """
        return np.full(self.channels, 2.0 * self.amplitude * math.sqrt(2 * len(self.omega) / self.channels))

    def __call__(self, points: np.ndarray) -> np.ndarray:
        arg = np.asarray(points, dtype=np.float64) @ self.omega.T
        out = np.empty(arg.shape[:-1] + (2 * arg.shape[-1],))
        out[..., 0::2] = np.cos(arg)
        out[..., 1::2] = np.sin(arg)
        return self.amplitude * out[..., : self.channels]


def synth_features(scene: Scene, rig: CameraRig, frame: str, noise_sigma: float = 0.0,
                   channels: int = 32, scale: float = 0.3, energy: float = 256.0, rendered: Render | None = None,
                   embedding: Embedding | None = None) -> np.ndarray:
    """``(H, W, C)`` feature map: embedding of the imaged world point plus noise."""
    k = rig.intrinsics
    rendered = rendered if rendered is not None else render(scene, rig, frame)
    emb = embedding if embedding is not None else Embedding(channels, scale, energy)
    feat = np.broadcast_to(emb.background, (k.height, k.width, emb.channels)).copy()
    fg = rendered.foreground
    if fg.any():
        vv, uu = np.nonzero(fg)
        cam_pts = unproject(np.stack([uu, vv], axis=-1), rendered.depth[vv, uu], k)
        world = rig.pose(frame).inverse().apply(cam_pts)
        feat[vv, uu] = emb(world)
    if noise_sigma > 0:
        cam_idx = next((i for i, r in enumerate(scene.rigs) if r is rig), 0)
        rng = np.random.default_rng([scene.seed, cam_idx, 0 if frame == FRAME_T else 1])
        feat = feat + rng.normal(scale=noise_sigma, size=feat.shape)
    return feat


def sample_lidar(scene: Scene, rig: CameraRig, density: float, outlier_rate: float,
                 outlier_shift: float, seed: int, rendered: Render | None = None) -> SparseGroundTruth:
    """Sample ``ceil(density * |mask|)`` pixels per instance; corrupt a fraction."""
    if not 0 < density <= 1:
        raise SceneError("density must lie in (0, 1]")
    if not 0 <= outlier_rate < 1:
        raise SceneError("outlier_rate must lie in [0, 1)")
    rendered = rendered if rendered is not None else render(scene, rig, FRAME_T)
    rng = np.random.default_rng([seed, 7919])
    gt = SparseGroundTruth()
    for mask in rendered.masks:
        n_pix = len(mask.pixels)
        n = min(n_pix, math.ceil(density * n_pix - 1e-9))
        if n < 1:
            continue
        pick = np.sort(rng.choice(n_pix, size=n, replace=False))
        pix = mask.pixels[pick]
        depths = rendered.depth[pix[:, 1], pix[:, 0]].astype(np.float64)
        n_out = math.ceil(outlier_rate * n - 1e-9)
        bad = np.zeros(n, dtype=bool)
        if n_out:
            idx = rng.choice(n, size=n_out, replace=False)
            bad[idx] = True
            signs = rng.choice([-1.0, 1.0], size=n_out)
            shifted = depths[idx] + signs * outlier_shift
            # keep corrupted returns in front of the camera
            shifted = np.where(shifted > 0, shifted, depths[idx] + outlier_shift)
            depths[idx] = shifted
        gt.samples[mask.instance_id] = (pix, depths)
        gt.outliers[mask.instance_id] = bad
    return gt
