"""Gated blending of stereo and motion disparities, plus the per-pixel oracle."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionMismatch


@dataclass(eq=False)
class WeightMaps:
    w_reset: np.ndarray
    w_fusion: np.ndarray

    def __post_init__(self):
        if self.w_reset.shape != self.w_fusion.shape:
            raise DimensionMismatch(f"w_reset {self.w_reset.shape} vs w_fusion {self.w_fusion.shape}")

    @property
    def motion_weight(self) -> np.ndarray:
        return self.w_reset * self.w_fusion


def fuse(d_s, d_m, weights: WeightMaps, visibility=None) -> np.ndarray:
    """(1 - w_r w_f) d_S + w_r w_f d_M, with d_M := d_S where ``visibility`` is 0.

    The result is clipped to the closed interval of the two inputs so the
    convex bound holds exactly in floating point.
    """
    d_s = np.asarray(d_s, dtype=np.float64)
    d_m = np.asarray(d_m, dtype=np.float64)
    if d_s.shape != d_m.shape or d_s.shape != weights.w_reset.shape:
        raise DimensionMismatch(f"d_S {d_s.shape}, d_M {d_m.shape}, weights {weights.w_reset.shape}")
    if visibility is not None:
        d_m = np.where(np.asarray(visibility, dtype=bool), d_m, d_s)
    w = weights.motion_weight
    out = (1.0 - w) * d_s + w * d_m
    return np.clip(out, np.minimum(d_s, d_m), np.maximum(d_s, d_m))


def empirical_best(d_s, d_m, d_gt) -> np.ndarray:
    """Per pixel, whichever estimate is closer to ground truth; ties keep d_S."""
    d_s = np.asarray(d_s, dtype=np.float64)
    d_m = np.asarray(d_m, dtype=np.float64)
    if d_s.shape != d_m.shape or d_s.shape != np.shape(d_gt):
        raise DimensionMismatch("d_S, d_M and d_gt must share a shape")
    return np.where(np.abs(d_m - d_gt) < np.abs(d_s - d_gt), d_m, d_s)
