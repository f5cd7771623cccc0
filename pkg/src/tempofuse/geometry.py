"""Pinhole stereo camera model, SE3 algebra and z-buffered forward splatting."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import DimensionMismatch, InvalidConfig, NonPositiveDepth, NonPositiveDisparity

ZBUFFER_TIE_TOL = 1e-12


@dataclass(frozen=True)
class CameraRig:
    """Rectified stereo pair: shared intrinsics, right camera at +baseline along x."""

    fx: float
    fy: float
    cx: float
    cy: float
    baseline: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidConfig(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not self.baseline > 0:
            raise InvalidConfig(f"baseline must be positive, got {self.baseline}")
        if self.width < 2 or self.height < 2:
            raise InvalidConfig(f"image must be at least 2x2, got {self.width}x{self.height}")

    @property
    def fb(self) -> float:
        """Disparity-depth constant fx*baseline (pixel-meters)."""
        return self.fx * self.baseline

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def pixel_grid(self) -> tuple[np.ndarray, np.ndarray]:
        """Column and row coordinate maps, each H x W float64."""
        v, u = np.mgrid[0:self.height, 0:self.width].astype(np.float64)
        return u, v


def disparity_to_depth(d, rig: CameraRig):
    d = np.asarray(d, dtype=np.float64)
    if np.any(~(d > 0)):
        raise NonPositiveDisparity("disparity must be > 0")
    return rig.fb / d


def lift(u, v, d, rig: CameraRig) -> np.ndarray:
    """Back-project pixel(s) with disparity to camera-frame points, shape (..., 3)."""
    z = disparity_to_depth(d, rig)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    x = (u - rig.cx) * z / rig.fx
    y = (v - rig.cy) * z / rig.fy
    return np.stack(np.broadcast_arrays(x, y, z), axis=-1)


def project(p, rig: CameraRig):
    """Project camera-frame point(s) to (u, v, d).  No clipping to the image."""
    p = np.asarray(p, dtype=np.float64)
    z = p[..., 2]
    if np.any(~(z > 0)):
        raise NonPositiveDepth("point depth must be > 0")
    u = rig.fx * p[..., 0] / z + rig.cx
    v = rig.fy * p[..., 1] / z + rig.cy
    d = rig.fb / z
    return u, v, d


def hat(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def so3_exp(w) -> np.ndarray:
    """Rodrigues formula; Taylor branch near zero angle."""
    w = np.asarray(w, dtype=np.float64)
    theta = float(np.linalg.norm(w))
    K = hat(w)
    if theta < 1e-8:
        return np.eye(3) + K + 0.5 * K @ K
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * K + b * K @ K


def rotation_angle(R) -> float:
    """Geodesic angle of a rotation matrix, accurate near zero."""
    R = np.asarray(R, dtype=np.float64)
    s = 0.5 * np.linalg.norm([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    c = 0.5 * (np.trace(R) - 1.0)
    return float(np.arctan2(s, c))


@dataclass(frozen=True, eq=False)
class SE3:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "SE3":
        return cls()

    @classmethod
    def from_matrix(cls, M) -> "SE3":
        M = np.asarray(M, dtype=np.float64)
        return cls(M[:3, :3], M[:3, 3])

    @classmethod
    def exp(cls, omega, v) -> "SE3":
        """Retraction used throughout: rotate by exp(omega), then translate by v."""
        return cls(so3_exp(omega), np.asarray(v, dtype=np.float64))

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def __matmul__(self, other: "SE3") -> "SE3":
        return SE3(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self) -> "SE3":
        Rt = self.rotation.T
        return SE3(Rt, -Rt @ self.translation)

    def apply(self, p) -> np.ndarray:
        return np.asarray(p, dtype=np.float64) @ self.rotation.T + self.translation

    def is_valid(self, tol: float = 1e-9) -> bool:
        R = self.rotation
        return (np.abs(R.T @ R - np.eye(3)).max() < tol) and abs(np.linalg.det(R) - 1.0) < tol

    def __repr__(self):
        return f"SE3(angle={rotation_angle(self.rotation):.3g} rad, t={np.round(self.translation, 6).tolist()})"


@dataclass(frozen=True, eq=False)
class SE3Field:
    """Per-pixel rigid transforms: rotation (H, W, 3, 3), translation (H, W, 3)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        if self.rotation.shape[:2] != self.translation.shape[:2] or self.rotation.shape[2:] != (3, 3) \
                or self.translation.shape[2:] != (3,):
            raise DimensionMismatch(
                f"field shapes disagree: rotation {self.rotation.shape}, translation {self.translation.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.rotation.shape[:2]

    @classmethod
    def identity(cls, height: int, width: int) -> "SE3Field":
        return cls.constant(SE3.identity(), height, width)

    @classmethod
    def constant(cls, T: SE3, height: int, width: int) -> "SE3Field":
        R = np.broadcast_to(T.rotation, (height, width, 3, 3)).copy()
        t = np.broadcast_to(T.translation, (height, width, 3)).copy()
        return cls(R, t)

    @classmethod
    def from_labels(cls, labels: np.ndarray, transforms: dict, default: SE3 | None = None) -> "SE3Field":
        h, w = labels.shape
        base = default if default is not None else SE3.identity()
        out = cls.constant(base, h, w)
        for label, T in transforms.items():
            m = labels == label
            out.rotation[m] = T.rotation
            out.translation[m] = T.translation
        return out

    def at(self, i: int, j: int) -> SE3:
        return SE3(self.rotation[i, j], self.translation[i, j])

    def compose(self, other: "SE3Field") -> "SE3Field":
        """Pixelwise self @ other (other applied first)."""
        if self.shape != other.shape:
            raise DimensionMismatch(f"field shapes {self.shape} vs {other.shape}")
        R = self.rotation @ other.rotation
        t = np.einsum("hwij,hwj->hwi", self.rotation, other.translation) + self.translation
        return SE3Field(R, t)

    def max_orthonormality_error(self) -> float:
        R = self.rotation
        RtR = np.einsum("hwki,hwkj->hwij", R, R)
        err = np.abs(RtR - np.eye(3)).max()
        return float(max(err, np.abs(np.linalg.det(R) - 1.0).max()))


def apply_se3_field(points: np.ndarray, field: SE3Field) -> np.ndarray:
    if points.shape != field.shape + (3,):
        raise DimensionMismatch(f"points {points.shape} do not match field {field.shape}")
    return np.einsum("hwij,hwj->hwi", field.rotation, points) + field.translation


@dataclass(eq=False)
class MemoryState:
    """Per-pixel disparity plus carried channels; everything H x W (features H x W x C)."""

    disparity: np.ndarray
    features: np.ndarray
    visibility: np.ndarray
    flow_magnitude: np.ndarray
    flow_confidence: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        shape = self.disparity.shape
        for name in ("visibility", "flow_magnitude", "flow_confidence", "valid"):
            if getattr(self, name).shape != shape:
                raise DimensionMismatch(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.features.shape[:2] != shape:
            raise DimensionMismatch(f"features have shape {self.features.shape}, expected {shape} + (C,)")

    @property
    def shape(self):
        return self.disparity.shape

    @classmethod
    def from_disparity(cls, disparity, features=None, valid=None) -> "MemoryState":
        """Fresh state with no history: visibility 0, no flow."""
        disparity = np.asarray(disparity, dtype=np.float64)
        h, w = disparity.shape
        if features is None:
            features = np.zeros((h, w, 0))
        if valid is None:
            valid = np.isfinite(disparity) & (disparity > 0)
        zeros = np.zeros((h, w))
        return cls(disparity, np.asarray(features, dtype=np.float64), zeros.astype(bool),
                   zeros.copy(), zeros.copy(), np.asarray(valid, dtype=bool))

    def with_disparity(self, disparity) -> "MemoryState":
        return replace(self, disparity=np.asarray(disparity, dtype=np.float64))


@dataclass(eq=False)
class SplatResult:
    """Raw splat output: winner source index per target pixel (-1 for holes)."""

    winner: np.ndarray
    u: np.ndarray
    v: np.ndarray
    d: np.ndarray


def splat_indices(disparity, valid, field: SE3Field, rig: CameraRig) -> SplatResult:
    """Lift valid source pixels, transform, project, and resolve the z-buffer.

    Targets are the nearest integer pixel (round half up).  Among the sources
    landing on one target, the smallest transformed depth wins; depths equal
    within ``ZBUFFER_TIE_TOL`` go to the earliest source in raster order.
    """
    h, w = disparity.shape
    if field.shape != (h, w):
        raise DimensionMismatch(f"field {field.shape} vs state {(h, w)}")
    u0, v0 = rig.pixel_grid()
    ok = np.asarray(valid, dtype=bool) & np.isfinite(disparity) & (disparity > 0)
    d_src = np.where(ok, disparity, 1.0)
    src_pts = lift(u0, v0, d_src, rig)
    pts = apply_se3_field(src_pts, field)
    z = pts[..., 2]
    ok &= z > 0
    zs = np.where(ok, z, 1.0)
    u1 = rig.fx * pts[..., 0] / zs + rig.cx
    v1 = rig.fy * pts[..., 1] / zs + rig.cy
    ti = np.floor(v1 + 0.5)
    tj = np.floor(u1 + 0.5)
    ok &= (ti >= 0) & (ti <= h - 1) & (tj >= 0) & (tj <= w - 1)
    target = np.where(ok, ti * w + tj, 0).astype(np.int64).ravel()
    win = kernels.zbuffer_winners(target, zs.ravel(), ok.ravel(), h * w, ZBUFFER_TIE_TOL)
    # d * z0 / z1 rather than fb / z1: exact when the depth is unchanged
    return SplatResult(win.reshape(h, w), u1, v1, d_src * (src_pts[..., 2] / zs))


def splat(state: MemoryState, field: SE3Field, rig: CameraRig, confidence=None) -> MemoryState:
    """Forward-warp a memory state through a per-pixel SE3 field.

    ``confidence`` is a source-indexed map copied into ``flow_confidence``
    of the winners (defaults to ones).  Holes get valid = visibility = 0.
    """
    h, w = state.shape
    res = splat_indices(state.disparity, state.valid, field, rig)
    win = res.winner.ravel()
    hit = win >= 0
    idx = np.where(hit, win, 0)
    u0, v0 = rig.pixel_grid()
    flow_mag = np.hypot(res.u - u0, res.v - v0).ravel()
    conf = np.ones((h, w)) if confidence is None else np.asarray(confidence, dtype=np.float64)

    def gather(src, fill=0.0):
        return np.where(hit, src.ravel()[idx], fill).reshape(h, w)

    c = state.features.shape[2]
    feats = state.features.reshape(h * w, c)[idx]
    feats[~hit] = 0.0
    return MemoryState(
        disparity=gather(res.d),
        features=feats.reshape(h, w, c),
        visibility=hit.reshape(h, w).copy(),
        flow_magnitude=gather(flow_mag),
        flow_confidence=gather(conf),
        valid=hit.reshape(h, w).copy(),
    )
