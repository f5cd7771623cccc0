"""Per-frame disparity: census + SAD block matching, hand-crafted features, matching confidence."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionMismatch, DisparityRangeInvalid
from .scene_sim import NoiseModel, perturb_disparity

FEATURE_CHANNELS = 10
CENSUS_RADIUS = 3
SAD_WEIGHT = 0.3
LR_THRESHOLD = 1.0


@dataclass(eq=False)
class StereoResult:
    disparity: np.ndarray
    left_features: np.ndarray
    right_features: np.ndarray
    valid: np.ndarray


def _octant_offsets(radius: int):
    offs = [(dy, dx) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)
            if (dy, dx) != (0, 0)]
    ang = np.array([np.arctan2(dy, dx) for dy, dx in offs])
    octant = np.floor((ang + np.pi) / (np.pi / 4) + 1e-9).astype(int) % 8
    return offs, octant


def extract_features(image: np.ndarray, radius: int = CENSUS_RADIUS) -> np.ndarray:
    """10-channel feature map in [0, 1].

    Channels 0-7: per angular octant of the census window, the fraction of
    neighbours darker than the centre (ties count one half).  Channels 8-9:
    absolute central differences along x and y.  Borders replicate.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    pad = np.pad(img, radius, mode="edge")
    offs, octant = _octant_offsets(radius)
    out = np.zeros((h, w, FEATURE_CHANNELS))
    counts = np.bincount(octant, minlength=8)
    for (dy, dx), k in zip(offs, octant):
        nb = pad[radius + dy:radius + dy + h, radius + dx:radius + dx + w]
        out[..., k] += (nb < img) + 0.5 * (nb == img)
    out[..., :8] /= counts
    out[..., 8] = np.abs(pad[radius:radius + h, radius + 1:radius + 1 + w]
                         - pad[radius:radius + h, radius - 1:radius - 1 + w])
    out[..., 9] = np.abs(pad[radius + 1:radius + 1 + h, radius:radius + w]
                         - pad[radius - 1:radius - 1 + h, radius:radius + w])
    return out


def gain_normalize(image: np.ndarray, radius: int = CENSUS_RADIUS, eps: float = 1e-3) -> np.ndarray:
    """Divide by the local (2r+1)^2 mean so SAD ignores a global intensity gain."""
    h, w = image.shape
    pad = np.pad(image, radius, mode="edge")
    c = np.pad(pad, ((1, 0), (1, 0))).cumsum(0).cumsum(1)
    k = 2 * radius + 1
    mean = (c[k:, k:] - c[:-k, k:] - c[k:, :-k] + c[:-k, :-k]) / (k * k)
    return np.ascontiguousarray(image / (mean + eps))


def _subpixel(cost: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Parabola offset in [-0.5, 0.5] around the integer argmin; 0 at range ends."""
    h, w, D = cost.shape
    k = np.clip(idx, 1, D - 2)
    cost = np.where(np.isfinite(cost), cost, 1e300)
    ii, jj = np.indices((h, w))
    c0 = cost[ii, jj, k]
    cm = cost[ii, jj, k - 1]
    cp = cost[ii, jj, k + 1]
    denom = cm - 2 * c0 + cp
    ok = (idx >= 1) & (idx <= D - 2) & (cm < 1e300) & (cp < 1e300) & (denom > 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        off = np.where(ok, (cm - cp) / (2 * np.where(ok, denom, 1.0)), 0.0)
    return np.clip(off, -0.5, 0.5)


def block_match(left: np.ndarray, right: np.ndarray, max_disparity: int = 64,
                census_radius: int = CENSUS_RADIUS, sad_weight: float = SAD_WEIGHT,
                lr_threshold: float = LR_THRESHOLD) -> StereoResult:
    """Winner-take-all over d in [1, max_disparity] with parabola refinement and LR check."""
    if not (isinstance(max_disparity, (int, np.integer)) and 2 <= max_disparity <= 210):
        raise DisparityRangeInvalid(f"max_disparity must be an integer in [2, 210], got {max_disparity}")
    if not 1 <= census_radius <= 3:
        raise DisparityRangeInvalid(f"census_radius must be in [1, 3] (64-bit codes), got {census_radius}")
    left = np.ascontiguousarray(left, dtype=np.float64)
    right = np.ascontiguousarray(right, dtype=np.float64)
    if left.shape != right.shape:
        raise DimensionMismatch(f"left {left.shape} vs right {right.shape}")
    h, w = left.shape
    nbits = (2 * census_radius + 1) ** 2 - 1
    codes_l = kernels.census_transform(left, census_radius)
    codes_r = kernels.census_transform(right, census_radius)
    cost = kernels.stereo_cost_volume(gain_normalize(left, census_radius), gain_normalize(right, census_radius),
                                      codes_l, codes_r, int(max_disparity),
                                      census_radius, float(sad_weight), float(nbits))
    idx = np.argmin(cost, axis=2)
    best = np.take_along_axis(cost, idx[..., None], axis=2)[..., 0]
    disparity = idx + 1 + _subpixel(cost, idx)

    cost_r = np.full_like(cost, np.inf)
    for k in range(cost.shape[2]):
        d = k + 1
        if d < w:
            cost_r[:, :w - d, k] = cost[:, d:, k]
    idx_r = np.argmin(cost_r, axis=2)
    cols = np.arange(w)[None, :] - (idx + 1)
    inside = cols >= 0
    rows = np.indices((h, w))[0]
    back = idx_r[rows, np.clip(cols, 0, w - 1)]
    consistent = inside & (np.abs(idx - back) <= lr_threshold)
    valid = np.isfinite(best) & consistent
    return StereoResult(disparity, extract_features(left, census_radius),
                        extract_features(right, census_radius), valid)


def noisy_oracle(left: np.ndarray, right: np.ndarray, gt_disparity: np.ndarray, gt_valid: np.ndarray,
                 noise: NoiseModel, labels: np.ndarray | None = None,
                 max_disparity: float = 210.0) -> StereoResult:
    """Ground truth corrupted by ``noise``, clipped to [1, max_disparity]; real image features."""
    d = perturb_disparity(gt_disparity, noise, labels)
    d = np.where(gt_valid, np.clip(d, 1.0, max_disparity), 1.0)
    return StereoResult(d, extract_features(left), extract_features(right), np.asarray(gt_valid, dtype=bool))


def disparity_confidence(left_features: np.ndarray, right_features: np.ndarray,
                         disparity: np.ndarray) -> np.ndarray:
    """Mean-over-channels L1 feature distance at disparity offsets -1, 0, +1.

    Right features are sampled bilinearly along the row; samples outside the
    image (or at non-finite disparities) read 1, the maximum distance.
    """
    if left_features.shape != right_features.shape or left_features.shape[:2] != disparity.shape:
        raise DimensionMismatch("feature maps and disparity must share H x W")
    h, w, _ = left_features.shape
    u = np.arange(w, dtype=np.float64)[None, :]
    rows = np.arange(h)[:, None]
    out = np.ones((h, w, 3))
    for ch, off in enumerate((-1.0, 0.0, 1.0)):
        x = u - (disparity + off)
        ok = np.isfinite(x) & (x >= 0) & (x <= w - 1)
        xs = np.where(ok, x, 0.0)
        x0 = np.floor(xs).astype(np.int64)
        x1 = np.minimum(x0 + 1, w - 1)
        a = (xs - x0)[..., None]
        sampled = (1 - a) * right_features[rows, x0] + a * right_features[rows, x1]
        dist = np.abs(left_features - sampled).mean(axis=2)
        out[..., ch] = np.where(ok, dist, 1.0)
    return out
