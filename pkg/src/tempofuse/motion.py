"""Inter-frame rigid motion recovery and alignment of the previous memory state.

Correspondences come from census patch matching between consecutive left
images.  Each rigid body (or the whole frame) gets one SE3 from a weighted
Gauss-Newton solve on lifted 3D point pairs; the per-pixel field is the
per-label broadcast of those transforms, indexed by previous-frame pixels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DegenerateGeometry, DimensionMismatch
from .geometry import SE3, CameraRig, MemoryState, SE3Field, apply_se3_field, hat, lift, splat, so3_exp

MODES = ("oracle", "global_rigid", "per_object_rigid")


@dataclass(eq=False)
class Correspondences:
    """Struct-of-arrays: source (t-1) and target (t) pixels with disparities and weights."""

    src_u: np.ndarray
    src_v: np.ndarray
    src_d: np.ndarray
    dst_u: np.ndarray
    dst_v: np.ndarray
    dst_d: np.ndarray
    weight: np.ndarray

    def __len__(self):
        return self.src_u.size

    def subset(self, mask) -> "Correspondences":
        return Correspondences(*(getattr(self, f)[mask] for f in
                                 ("src_u", "src_v", "src_d", "dst_u", "dst_v", "dst_d", "weight")))

    def points(self, rig: CameraRig):
        return lift(self.src_u, self.src_v, self.src_d, rig), lift(self.dst_u, self.dst_v, self.dst_d, rig)


@dataclass(eq=False)
class FrameObs:
    """What the motion stage may see of one frame."""

    image: np.ndarray
    disparity: np.ndarray
    valid: np.ndarray
    labels: np.ndarray | None = None


@dataclass(eq=False)
class MotionEstimate:
    """Per-pixel motion from t-1 to t, indexed by previous-frame pixels."""

    field: SE3Field
    flow: np.ndarray
    confidence: np.ndarray
    iterations_used: int
    scene_flow: np.ndarray | None = None  # meters


def _bilinear(img, x, y):
    h, w = img.shape
    x = np.clip(x, 0, w - 1)
    y = np.clip(y, 0, h - 1)
    x0 = np.minimum(np.floor(x).astype(np.int64), w - 2)
    y0 = np.minimum(np.floor(y).astype(np.int64), h - 2)
    ax, ay = x - x0, y - y0
    return ((1 - ay) * ((1 - ax) * img[y0, x0] + ax * img[y0, x0 + 1])
            + ay * ((1 - ax) * img[y0 + 1, x0] + ax * img[y0 + 1, x0 + 1]))


def refine_subpixel(a, b, gu, gv, tu, tv, radius: int = 3, iterations: int = 4):
    """Lucas-Kanade refinement of integer matches (gu, gv) -> (tu, tv).

    Returns float target coordinates; updates larger than one pixel are
    rejected and the integer match kept.
    """
    h, w = a.shape
    oy, ox = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    oy, ox = oy.ravel(), ox.ravel()
    A = a[np.clip(gv[:, None] + oy, 0, h - 1), np.clip(gu[:, None] + ox, 0, w - 1)]
    gy, gx = np.gradient(b)
    delta = np.zeros((gu.size, 2))
    for _ in range(iterations):
        x = tu[:, None] + ox + delta[:, :1]
        y = tv[:, None] + oy + delta[:, 1:]
        r = _bilinear(b, x, y) - A
        jx, jy = _bilinear(gx, x, y), _bilinear(gy, x, y)
        hxx, hxy, hyy = (jx * jx).sum(1), (jx * jy).sum(1), (jy * jy).sum(1)
        bx, by = (jx * r).sum(1), (jy * r).sum(1)
        det = hxx * hyy - hxy * hxy
        ok = det > 1e-12
        det = np.where(ok, det, 1.0)
        step_x = np.where(ok, -(hyy * bx - hxy * by) / det, 0.0)
        step_y = np.where(ok, -(hxx * by - hxy * bx) / det, 0.0)
        delta += np.stack([step_x, step_y], axis=1)
    bad = np.abs(delta).max(axis=1) > 1.0
    delta[bad] = 0.0
    return tu + delta[:, 0], tv + delta[:, 1]


def match_frames(prev: FrameObs, curr: FrameObs, search_radius: int = 8, stride: int = 4,
                 patch_radius: int = 2, census_radius: int = 3, subpixel: bool = True) -> Correspondences:
    """Census patch matching of a stride grid of previous pixels into the current frame.

    Weight is the matching cost normalised by the mean cost over the search
    window, inverted: ``(mean - best) / (mean + 1)``.  Flat patches, where
    every offset costs the same, therefore get weight ~0.  With ``subpixel``
    the integer match is refined by Lucas-Kanade on intensities and the
    target disparity is sampled bilinearly.
    """
    a = np.ascontiguousarray(prev.image, dtype=np.float64)
    b = np.ascontiguousarray(curr.image, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"frames differ in shape: {a.shape} vs {b.shape}")
    h, w = a.shape
    codes_a = kernels.census_transform(a, census_radius)
    codes_b = kernels.census_transform(b, census_radius)
    off = stride // 2
    gv, gu = np.mgrid[off:h:stride, off:w:stride]
    gv, gu = gv.ravel().astype(np.int64), gu.ravel().astype(np.int64)
    keep = prev.valid[gv, gu]
    gv, gu = gv[keep], gu[keep]
    dv, du, best, mean = kernels.patch_match(codes_a, codes_b, gv, gu, int(search_radius), int(patch_radius))
    tv, tu = gv + dv, gu + du
    weight = np.clip((mean - best) / (mean + 1.0), 0.0, 1.0)
    ok = curr.valid[tv, tu] & (prev.disparity[gv, gu] > 0) & (curr.disparity[tv, tu] > 0)
    fu, fv = tu.astype(np.float64), tv.astype(np.float64)
    dst_d = curr.disparity[tv, tu].astype(np.float64)
    if subpixel and gu.size:
        fu, fv = refine_subpixel(a, b, gu, gv, fu, fv)
        dst_d = _bilinear(np.where(curr.valid, curr.disparity, 0.0), fu, fv)
        ok &= dst_d > 0
    return Correspondences(gu[ok].astype(np.float64), gv[ok].astype(np.float64), prev.disparity[gv, gu][ok],
                           fu[ok], fv[ok], dst_d[ok], weight[ok])


def weighted_residual(T: SE3, src: np.ndarray, dst: np.ndarray, weight: np.ndarray) -> float:
    r = T.apply(src) - dst
    return float(np.sum(weight * np.einsum("ij,ij->i", r, r)))


def solve_rigid(src: np.ndarray, dst: np.ndarray, weight: np.ndarray, K: int = 16,
                init: SE3 | None = None) -> tuple[SE3, int]:
    """Weighted point-to-point Gauss-Newton on the left-perturbation retraction.

    Steps that would raise the residual are halved (up to 20 times); the
    solve stops early once no step helps.  Returns the best iterate and the
    number of accepted steps.
    """
    weight = np.asarray(weight, dtype=np.float64)
    if np.count_nonzero(weight > 0) < 3:
        raise DegenerateGeometry(f"need >= 3 positively weighted correspondences, got {np.count_nonzero(weight > 0)}")
    T = init if init is not None else SE3.identity()
    cost = weighted_residual(T, src, dst, weight)
    used = 0
    for it in range(K):
        p = T.apply(src)
        r = p - dst
        J = np.zeros((src.shape[0], 3, 6))
        J[:, :, :3] = -hat(p)
        J[:, :, 3:] = np.eye(3)
        H = np.einsum("n,nki,nkj->ij", weight, J, J)
        g = np.einsum("n,nki,nk->i", weight, J, r)
        if it == 0:
            ev = np.linalg.eigvalsh(H)
            if ev[0] <= 1e-10 * ev[-1]:
                raise DegenerateGeometry(f"normal equations are rank deficient (eigenvalues {ev[0]:.3g} / {ev[-1]:.3g})")
        delta = -np.linalg.solve(H, g)
        step = 1.0
        accepted = False
        for _ in range(20):
            R = so3_exp(step * delta[:3])
            cand = SE3(R @ T.rotation, R @ T.translation + step * delta[3:])
            c = weighted_residual(cand, src, dst, weight)
            if c < cost:
                T, cost, accepted = cand, c, True
                break
            step *= 0.5
        if not accepted:
            break
        used += 1
    return T, used


def estimate_rigid_gn(correspondences: Correspondences, rig: CameraRig, K: int = 16,
                      init: SE3 | None = None) -> SE3:
    """SE3 mapping lifted source points onto lifted target points."""
    src, dst = correspondences.points(rig)
    T, _ = solve_rigid(src, dst, correspondences.weight, K, init)
    return T


DISPARITY_RESIDUAL_WEIGHT = 0.1


def _reprojection(T: SE3, src, meas, rig: CameraRig, dw: float):
    q = T.apply(src)
    z = np.maximum(q[:, 2], 1e-6)
    pred = np.stack([rig.fx * q[:, 0] / z + rig.cx, rig.fy * q[:, 1] / z + rig.cy, rig.fb / z], axis=1)
    r = pred - meas
    r[:, 2] *= np.sqrt(dw)
    return q, z, r


def solve_reprojection(src: np.ndarray, meas: np.ndarray, weight: np.ndarray, rig: CameraRig, K: int = 16,
                       init: SE3 | None = None,
                       disparity_weight: float = DISPARITY_RESIDUAL_WEIGHT) -> tuple[SE3, int]:
    """Weighted Gauss-Newton on image-space residuals (u, v, sqrt(dw) * d).

    ``meas`` holds the target (u, v, d).  Down-weighting the disparity term
    keeps depth noise from dominating the fit; damping as in ``solve_rigid``.
    """
    weight = np.asarray(weight, dtype=np.float64)
    if np.count_nonzero(weight > 0) < 3:
        raise DegenerateGeometry(f"need >= 3 positively weighted correspondences, got {np.count_nonzero(weight > 0)}")
    sdw = np.sqrt(disparity_weight)
    T = init if init is not None else SE3.identity()
    q, z, r = _reprojection(T, src, meas, rig, disparity_weight)
    cost = float(np.sum(weight * np.einsum("ij,ij->i", r, r)))
    used = 0
    for it in range(K):
        dproj = np.zeros((src.shape[0], 3, 3))
        dproj[:, 0, 0] = rig.fx / z
        dproj[:, 0, 2] = -rig.fx * q[:, 0] / z ** 2
        dproj[:, 1, 1] = rig.fy / z
        dproj[:, 1, 2] = -rig.fy * q[:, 1] / z ** 2
        dproj[:, 2, 2] = -sdw * rig.fb / z ** 2
        dq = np.zeros((src.shape[0], 3, 6))
        dq[:, :, :3] = -hat(q)
        dq[:, :, 3:] = np.eye(3)
        J = dproj @ dq
        H = np.einsum("n,nki,nkj->ij", weight, J, J)
        g = np.einsum("n,nki,nk->i", weight, J, r)
        if it == 0:
            ev = np.linalg.eigvalsh(H)
            if ev[0] <= 1e-10 * ev[-1]:
                raise DegenerateGeometry(f"normal equations are rank deficient (eigenvalues {ev[0]:.3g} / {ev[-1]:.3g})")
        delta = -np.linalg.solve(H, g)
        step = 1.0
        accepted = False
        for _ in range(20):
            R = so3_exp(step * delta[:3])
            cand = SE3(R @ T.rotation, R @ T.translation + step * delta[3:])
            cq, cz, cr = _reprojection(cand, src, meas, rig, disparity_weight)
            c = float(np.sum(weight * np.einsum("ij,ij->i", cr, cr)))
            if c < cost:
                T, cost, q, z, r, accepted = cand, c, cq, cz, cr, True
                break
            step *= 0.5
        if not accepted:
            break
        used += 1
    return T, used


def _robust_fit(src, meas, weight, rig: CameraRig, K: int, rounds: int = 2):
    """Solve, then twice drop pairs whose residual exceeds 3x the weighted median."""
    T, used = solve_reprojection(src, meas, weight, rig, K)
    w = weight
    for _ in range(rounds):
        r = np.linalg.norm(_reprojection(T, src, meas, rig, DISPARITY_RESIDUAL_WEIGHT)[2], axis=1)
        pos = w > 0
        order = np.argsort(r[pos])
        cw = np.cumsum(w[pos][order])
        med = r[pos][order][np.searchsorted(cw, 0.5 * cw[-1])]
        w = np.where(r <= max(3.0 * med, 1e-9), weight, 0.0)
        T, u2 = solve_reprojection(src, meas, w, rig, K, init=T)
        used = max(used, u2)
    return T, used


def _grid_confidence(corr: Correspondences, shape, stride: int) -> np.ndarray:
    """Nearest-grid-node upsampling of correspondence weights (0 where no node)."""
    h, w = shape
    off = stride // 2
    gh, gw = len(range(off, h, stride)), len(range(off, w, stride))
    grid = np.zeros((gh, gw))
    gi = ((corr.src_v - off) // stride).astype(int)
    gj = ((corr.src_u - off) // stride).astype(int)
    grid[gi, gj] = corr.weight
    rows = np.clip(np.round((np.arange(h) - off) / stride).astype(int), 0, gh - 1)
    cols = np.clip(np.round((np.arange(w) - off) / stride).astype(int), 0, gw - 1)
    return grid[rows[:, None], cols[None, :]]


def flow_from_field(disparity, valid, field: SE3Field, rig: CameraRig):
    """Optical flow (px) and scene flow (m) of each valid pixel under its transform."""
    u0, v0 = rig.pixel_grid()
    ok = np.asarray(valid, dtype=bool) & (disparity > 0)
    P = lift(u0, v0, np.where(ok, disparity, 1.0), rig)
    Q = apply_se3_field(P, field)
    ok &= Q[..., 2] > 0
    z = np.where(ok, Q[..., 2], 1.0)
    u1 = rig.fx * Q[..., 0] / z + rig.cx
    v1 = rig.fy * Q[..., 1] / z + rig.cy
    flow = np.where(ok[..., None], np.stack([u1 - u0, v1 - v0], axis=-1), 0.0)
    sflow = np.where(ok[..., None], Q - P, 0.0)
    return flow, sflow


def estimate_field(prev: FrameObs, curr: FrameObs, rig: CameraRig, mode: str = "per_object_rigid",
                   K: int = 16, *, gt_field: SE3Field | None = None, gt_flow: np.ndarray | None = None,
                   search_radius: int = 8, stride: int = 4, min_correspondences: int = 6) -> MotionEstimate:
    """Per-pixel SE3 field from frame t-1 to t.

    ``oracle`` passes the ground-truth field through with confidence 1;
    ``global_rigid`` fits one transform to all correspondences;
    ``per_object_rigid`` fits one per label of ``prev.labels``.  Objects
    whose solve is degenerate keep the identity with confidence 0.
    """
    if mode not in MODES:
        raise ValueError(f"unknown motion mode {mode!r}; expected one of {MODES}")
    h, w = prev.disparity.shape
    if mode == "oracle":
        if gt_field is None:
            raise ValueError("oracle motion requires gt_field")
        flow, sflow = flow_from_field(prev.disparity, prev.valid, gt_field, rig)
        if gt_flow is not None:
            flow = np.asarray(gt_flow, dtype=np.float64)
        return MotionEstimate(gt_field, flow, np.ones((h, w)), 0, sflow)

    corr = match_frames(prev, curr, search_radius, stride)
    conf = _grid_confidence(corr, (h, w), stride)
    src = lift(corr.src_u, corr.src_v, corr.src_d, rig)
    meas = np.stack([corr.dst_u, corr.dst_v, corr.dst_d], axis=1)
    if mode == "global_rigid":
        groups = {None: np.ones(len(corr), dtype=bool)}
    else:
        if prev.labels is None:
            raise ValueError("per_object_rigid motion requires labels for the previous frame")
        src_label = prev.labels[corr.src_v.astype(int), corr.src_u.astype(int)]
        groups = {int(k): src_label == k for k in np.unique(prev.labels) if k >= 0}

    transforms = {}
    ok_map = np.zeros((h, w), dtype=bool)
    iters = 0
    for label, m in groups.items():
        region = np.ones((h, w), dtype=bool) if label is None else prev.labels == label
        if np.count_nonzero(m & (corr.weight > 0)) < min_correspondences:
            continue
        try:
            T, used = _robust_fit(src[m], meas[m], corr.weight[m], rig, K)
        except DegenerateGeometry:
            continue
        transforms[label] = T
        ok_map |= region
        iters = max(iters, used)

    if mode == "global_rigid":
        field = SE3Field.constant(transforms.get(None, SE3.identity()), h, w)
    else:
        field = SE3Field.from_labels(prev.labels, transforms)
    flow, sflow = flow_from_field(prev.disparity, prev.valid, field, rig)
    return MotionEstimate(field, flow, np.where(ok_map, conf, 0.0), iters, sflow)


def align_previous(prev_state: MemoryState, estimate: MotionEstimate, rig: CameraRig) -> MemoryState:
    """Warp the previous memory state into the current frame (holes: visibility 0)."""
    if prev_state.shape != estimate.field.shape:
        raise DimensionMismatch(f"state {prev_state.shape} vs motion field {estimate.field.shape}")
    return splat(prev_state, estimate.field, rig, confidence=estimate.confidence)
