"""Deterministic synthetic dynamic scenes with analytic stereo/motion ground truth.

A scene is a static, infinite fronto-parallel background plane (label 0)
plus rigid textured objects (labels 1..N) and a moving camera.  Every
ground-truth quantity is computed by ray casting and exact rigid algebra,
so disparity, flow, SE3 fields and occlusion masks are exact up to
floating point.

Motion ground truth for frame ``t`` is indexed by the pixels of frame
``t-1``: ``gt_flow[i, j]`` is where pixel (j, i) of the previous frame
moved to, and ``gt_se3_field`` maps previous-camera coordinates into the
current camera.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import FrameOutOfRange, InvalidConfig
from .geometry import SE3, CameraRig, SE3Field, so3_exp
from .io import write_pfm, write_pgm

MIN_DISPARITY = 1.0
MAX_DISPARITY = 210.0


@dataclass(frozen=True, eq=False)
class SineTexture:
    """Band-limited procedural albedo: 0.35 + offset + sum of sinusoids, clipped to [0, 1]."""

    freqs: np.ndarray  # (K, 3) rad/m in object coordinates
    phases: np.ndarray
    amps: np.ndarray
    offset: float = 0.0

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        arg = pts @ self.freqs.T + self.phases
        return np.clip(0.35 + self.offset + np.sin(arg) @ self.amps, 0.0, 1.0)

    @classmethod
    def random(cls, rng, nominal_depth: float, fx: float, planar: bool,
               n: int = 16, period_px=(4.0, 14.0)) -> "SineTexture":
        """Periods between ``period_px`` pixels when seen at ``nominal_depth``."""
        dirs = rng.normal(size=(n, 3))
        if planar:
            dirs[:, 2] = 0.0
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        period_m = rng.uniform(*period_px, size=n) * nominal_depth / fx
        freqs = dirs * (2 * np.pi / period_m)[:, None]
        phases = rng.uniform(0, 2 * np.pi, size=n)
        amps = 0.22 / np.sqrt(n) * rng.uniform(0.5, 1.0, size=n)
        return cls(freqs, phases, amps, float(rng.uniform(-0.05, 0.05)))


@dataclass(frozen=True, eq=False)
class SceneObject:
    """Rigid textured primitive.

    ``size`` is (half_width, half_height) for planes (ignored when
    ``infinite``) and (radius,) for spheres.  ``poses[t]`` maps object
    coordinates to world coordinates at frame ``t``; a plane lies in its
    local z = 0 plane.
    """

    kind: str
    size: tuple
    poses: tuple
    texture: SineTexture
    infinite: bool = False

    def extent(self) -> float:
        return 0.0 if self.infinite else float(max(self.size))


@dataclass(frozen=True, eq=False)
class SceneConfig:
    rig: CameraRig
    background: SceneObject
    objects: tuple
    camera_poses: tuple  # camera-to-world per frame; world = camera at t=0
    texture_seed: int = 0

    @property
    def num_frames(self) -> int:
        return len(self.camera_poses)

    @property
    def num_objects(self) -> int:
        return len(self.objects)


@dataclass(frozen=True, eq=False)
class NoiseModel:
    jitter_sigma: float = 0.5
    outlier_rate: float = 0.01
    outlier_magnitude: float = 8.0
    edge_bias: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.outlier_rate <= 1.0:
            raise InvalidConfig(f"outlier_rate must lie in [0, 1], got {self.outlier_rate}")
        if self.jitter_sigma < 0:
            raise InvalidConfig(f"jitter_sigma must be >= 0, got {self.jitter_sigma}")


@dataclass(eq=False)
class SceneSample:
    t: int
    left: np.ndarray
    right: np.ndarray
    gt_disparity: np.ndarray
    valid: np.ndarray
    labels: np.ndarray
    occluded: np.ndarray  # left pixels not visible from the right camera
    # the fields below are indexed by pixels of frame t-1
    gt_flow: np.ndarray
    gt_disparity_change: np.ndarray
    gt_scene_flow: np.ndarray  # meters, previous -> current camera coordinates
    gt_se3_field: SE3Field
    prev_labels: np.ndarray
    covisible: np.ndarray  # previous pixel still visible (same surface) at t

    @property
    def scene_flow_px(self) -> np.ndarray:
        """(flow_u, flow_v, disparity change) in pixels, previous-frame indexed."""
        return np.concatenate([self.gt_flow, self.gt_disparity_change[..., None]], axis=-1)


@dataclass(frozen=True, eq=False)
class Scene:
    config: SceneConfig

    @property
    def rig(self) -> CameraRig:
        return self.config.rig

    @property
    def num_frames(self) -> int:
        return self.config.num_frames

    def all_objects(self):
        return (self.config.background,) + tuple(self.config.objects)

    def camera_from_object(self, label: int, t: int) -> SE3:
        return self.config.camera_poses[t].inverse() @ self.all_objects()[label].poses[t]

    def motion(self, label: int, t: int) -> SE3:
        """Rigid motion of object ``label`` from camera(t-1) to camera(t) coordinates."""
        a, b = self.camera_from_object(label, t), self.camera_from_object(label, t - 1)
        if np.array_equal(a.matrix(), b.matrix()):
            return SE3.identity()  # exact, so still objects have exactly zero flow
        return self.camera_from_object(label, t) @ self.camera_from_object(label, t - 1).inverse()


def build_scene(config: SceneConfig) -> Scene:
    rig = config.rig
    T = config.num_frames
    if T < 2:
        raise InvalidConfig(f"sequence length T must be >= 2, got {T}")
    zmin, zmax = rig.fb / MAX_DISPARITY, rig.fb / MIN_DISPARITY
    scene = Scene(config)
    for label, obj in enumerate(scene.all_objects()):
        if obj.kind not in ("plane", "sphere"):
            raise InvalidConfig(f"object {label}: unknown kind {obj.kind!r}")
        if len(obj.poses) != T:
            raise InvalidConfig(f"object {label}: {len(obj.poses)} poses for {T} frames")
        if obj.infinite and obj.kind != "plane":
            raise InvalidConfig(f"object {label}: only planes may be infinite")
        for t in range(T):
            T_co = scene.camera_from_object(label, t)
            if obj.infinite:
                n = T_co.rotation[:, 2]
                if abs(n[2]) < 0.5:
                    raise InvalidConfig(f"background plane too oblique at frame {t}")
                # depth along the optical axis
                depths = [float(n @ T_co.translation / n[2])]
            else:
                c, r = T_co.translation[2], obj.extent()
                depths = [c - r, c + r]
            for z in depths:
                if not zmin <= z <= zmax:
                    raise InvalidConfig(
                        f"depth range violated: object {label} reaches z={z:.3f} m at frame {t}, "
                        f"allowed [{zmin:.3f}, {zmax:.3f}] (disparity in [1, 210] px)")
    return scene


def _intersect(obj: SceneObject, o: np.ndarray, d: np.ndarray):
    """Ray parameter and local hit point; inf where the ray misses."""
    n = d.shape[0]
    s = np.full(n, np.inf)
    if obj.kind == "plane":
        with np.errstate(divide="ignore", invalid="ignore"):
            cand = -o[2] / d[:, 2]
        hit = np.isfinite(cand) & (cand > 1e-9)
        local = o + cand[:, None] * d
        if not obj.infinite:
            hit &= (np.abs(local[:, 0]) <= obj.size[0]) & (np.abs(local[:, 1]) <= obj.size[1])
        s[hit] = cand[hit]
    else:
        r = obj.size[0]
        a = np.einsum("ij,ij->i", d, d)
        b = 2.0 * d @ o
        c = o @ o - r * r
        disc = b * b - 4 * a * c
        hit = disc >= 0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        s1 = (-b - sq) / (2 * a)
        s2 = (-b + sq) / (2 * a)
        cand = np.where(s1 > 1e-9, s1, s2)
        hit &= cand > 1e-9
        s[hit] = cand[hit]
        local = o + np.where(hit, cand, 0.0)[:, None] * d
    return s, local


def _cast(scene: Scene, t: int, origin, dirs: np.ndarray):
    """Cast rays (camera-t coordinates, unit z component) and shade the nearest hit."""
    origin = np.asarray(origin, dtype=np.float64)
    n = dirs.shape[0]
    best = np.full(n, np.inf)
    label = np.full(n, -1, dtype=np.int64)
    value = np.zeros(n)
    for k, obj in enumerate(scene.all_objects()):
        T_oc = scene.camera_from_object(k, t).inverse()
        o = T_oc.apply(origin)
        d = dirs @ T_oc.rotation.T
        s, local = _intersect(obj, o, d)
        closer = s < best
        if np.any(closer):
            best[closer] = s[closer]
            label[closer] = k
            value[closer] = obj.texture(local[closer])
    return best, label, value


def _rays(rig: CameraRig) -> np.ndarray:
    u, v = rig.pixel_grid()
    return np.stack([(u - rig.cx) / rig.fx, (v - rig.cy) / rig.fy, np.ones_like(u)], axis=-1).reshape(-1, 3)


def render_sample(scene: Scene, t: int) -> SceneSample:
    rig = scene.rig
    h, w = rig.shape
    if not 0 <= t < scene.num_frames:
        raise FrameOutOfRange(f"frame {t} outside [0, {scene.num_frames})")
    dirs = _rays(rig)
    right_origin = np.array([rig.baseline, 0.0, 0.0])

    z, label, left = _cast(scene, t, np.zeros(3), dirs)
    _, _, right = _cast(scene, t, right_origin, dirs)
    valid = np.isfinite(z)
    zs = np.where(valid, z, 1.0)
    disparity = np.where(valid, rig.fb / zs, 0.0)

    # stereo occlusion: is the left hit point the first surface seen from the right camera?
    pts = dirs * zs[:, None]
    to_pt = (pts - right_origin) / zs[:, None]
    z_r, _, _ = _cast(scene, t, right_origin, to_pt)
    occluded = valid & (z_r < zs * (1 - 1e-9))

    flow = np.zeros((h * w, 2))
    dchange = np.zeros(h * w)
    sflow = np.zeros((h * w, 3))
    covisible = np.zeros(h * w, dtype=bool)
    prev_label = np.full(h * w, -1, dtype=np.int64)
    field = SE3Field.identity(h, w)
    if t >= 1:
        zp, prev_label, _ = _cast(scene, t - 1, np.zeros(3), dirs)
        pvalid = np.isfinite(zp)
        zps = np.where(pvalid, zp, 1.0)
        motions = {k: scene.motion(k, t) for k in range(len(scene.all_objects()))}
        field = SE3Field.from_labels(prev_label.reshape(h, w), motions)
        P = dirs * zps[:, None]
        Q = np.einsum("nij,nj->ni", field.rotation.reshape(-1, 3, 3), P) + field.translation.reshape(-1, 3)
        front = pvalid & (Q[:, 2] > 0)
        qz = np.where(front, Q[:, 2], 1.0)
        u1 = rig.fx * Q[:, 0] / qz + rig.cx
        v1 = rig.fy * Q[:, 1] / qz + rig.cy
        u0, v0 = (a.ravel() for a in rig.pixel_grid())
        flow = np.where(front[:, None], np.stack([u1 - u0, v1 - v0], axis=-1), 0.0)
        dchange = np.where(front, rig.fb / qz - rig.fb / zps, 0.0)
        sflow = np.where(front[:, None], Q - P, 0.0)
        still = np.array([np.array_equal(m.matrix(), np.eye(4)) for m in motions.values()])
        still_px = pvalid & still[np.maximum(prev_label, 0)]
        flow[still_px] = 0.0
        dchange[still_px] = 0.0
        sflow[still_px] = 0.0
        zq, lq, _ = _cast(scene, t, np.zeros(3), Q / qz[:, None])
        inside = (u1 >= 0) & (u1 <= w - 1) & (v1 >= 0) & (v1 <= h - 1)
        covisible = front & inside & (lq == prev_label) & (np.abs(zq - qz) <= 1e-7 * qz)

    return SceneSample(
        t=t,
        left=left.reshape(h, w),
        right=right.reshape(h, w),
        gt_disparity=disparity.reshape(h, w),
        valid=valid.reshape(h, w),
        labels=label.reshape(h, w),
        occluded=occluded.reshape(h, w),
        gt_flow=flow.reshape(h, w, 2),
        gt_disparity_change=dchange.reshape(h, w),
        gt_scene_flow=sflow.reshape(h, w, 3),
        gt_se3_field=field,
        prev_labels=prev_label.reshape(h, w),
        covisible=covisible.reshape(h, w),
    )


def label_boundary(labels: np.ndarray) -> np.ndarray:
    """Pixels with an 8-neighbour carrying a different label."""
    h, w = labels.shape
    pad = np.pad(labels, 1, mode="edge")
    out = np.zeros((h, w), dtype=bool)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            out |= pad[1 + dy:1 + dy + h, 1 + dx:1 + dx + w] != labels
    return out


def perturb_disparity(gt: np.ndarray, model: NoiseModel, labels: np.ndarray | None = None) -> np.ndarray:
    """Gaussian jitter, then outlier replacement (gt +/- magnitude), then edge bias."""
    rng = np.random.default_rng(model.seed)
    gt = np.asarray(gt, dtype=np.float64)
    out = gt + model.jitter_sigma * rng.standard_normal(gt.shape)
    outlier = rng.random(gt.shape) < model.outlier_rate
    sign = rng.integers(0, 2, size=gt.shape) * 2 - 1
    out = np.where(outlier, gt + sign * model.outlier_magnitude, out)
    if labels is not None and model.edge_bias != 0.0:
        out = out + np.where(label_boundary(labels), model.edge_bias, 0.0)
    return out


def _constant_velocity(pose0: SE3, omega, v, T: int) -> tuple:
    """Rotate about the pose origin at omega rad/frame and translate by v m/frame (world)."""
    out = []
    for t in range(T):
        R = so3_exp(np.asarray(omega) * t) @ pose0.rotation
        out.append(SE3(R, pose0.translation + np.asarray(v) * t))
    return tuple(out)


def random_scene_config(seed: int, rig: CameraRig, num_frames: int, num_objects: int = 2,
                        camera_speed: float = 0.05, object_speed: float = 0.06,
                        static: bool = False, max_tries: int = 100) -> SceneConfig:
    """Sample a valid random scene; deterministic in ``seed``.

    Speeds are in meters per frame; angular rates are scaled alongside.
    ``static`` freezes both camera and objects.
    """
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        cfg = _sample_scene(rng, seed, rig, num_frames, num_objects,
                            0.0 if static else camera_speed, 0.0 if static else object_speed)
        try:
            build_scene(cfg)
        except InvalidConfig:
            continue
        return cfg
    raise InvalidConfig(f"could not sample a valid scene for seed {seed} in {max_tries} tries")


def _sample_scene(rng, seed, rig, T, num_objects, cam_speed, obj_speed) -> SceneConfig:
    fx = rig.fx
    z_bg = rng.uniform(7.0, 9.0)
    background = SceneObject(
        "plane", (), _constant_velocity(SE3(np.eye(3), [0, 0, z_bg]), np.zeros(3), np.zeros(3), T),
        SineTexture.random(rng, z_bg, fx, planar=True), infinite=True)
    objects = []
    for _ in range(num_objects):
        kind = "plane" if rng.random() < 0.5 else "sphere"
        z0 = rng.uniform(3.0, 5.5)
        u = rng.uniform(0.25, 0.75) * rig.width
        v = rng.uniform(0.25, 0.75) * rig.height
        center = np.array([(u - rig.cx) * z0 / fx, (v - rig.cy) * z0 / rig.fy, z0])
        if kind == "plane":
            size = tuple(rng.uniform(14, 24, size=2) * z0 / fx)
        else:
            size = (float(rng.uniform(12, 18) * z0 / fx),)
        omega = rng.uniform(-1, 1, size=3) * 0.3 * obj_speed
        vel = rng.uniform(-1, 1, size=3) * obj_speed * np.array([1.0, 0.6, 0.7])
        objects.append(SceneObject(kind, size, _constant_velocity(SE3(np.eye(3), center), omega, vel, T),
                                   SineTexture.random(rng, z0, fx, planar=kind == "plane")))
    cam_omega = rng.uniform(-1, 1, size=3) * 0.1 * cam_speed
    cam_vel = rng.uniform(-1, 1, size=3) * cam_speed * np.array([1.0, 0.5, 1.0])
    cameras = _constant_velocity(SE3.identity(), cam_omega, cam_vel, T)
    return SceneConfig(rig, background, tuple(objects), cameras, texture_seed=seed)


def save_sample(sample: SceneSample, directory, prefix: str = "") -> None:
    """Export images as 8-bit PGM and disparity / flow (u, v, disparity change) as PFM."""
    os.makedirs(directory, exist_ok=True)
    stem = os.path.join(directory, f"{prefix}")
    write_pgm(f"{stem}left_{sample.t:04d}.pgm", sample.left)
    write_pgm(f"{stem}right_{sample.t:04d}.pgm", sample.right)
    write_pfm(f"{stem}disp_{sample.t:04d}.pfm", sample.gt_disparity)
    write_pfm(f"{stem}flow_{sample.t:04d}.pfm", sample.scene_flow_px)
    write_pgm(f"{stem}mask_{sample.t:04d}.pgm", (sample.covisible * 255).astype(np.uint8))
