"""Supervision terms for the weight model: Huber disparity loss, reset and fusion gate losses.

All per-pixel functions are elementwise over broadcastable arrays.  The
``*_grad`` companions return subgradients; at case boundaries and at
``|w - 0.5| = 0`` they pick 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfig


@dataclass(frozen=True)
class LossConfig:
    tau_reset: float = 5.0
    tau_fusion: float = 1.0
    alpha_reg: float = 0.2
    alpha_disp: float = 1.0
    alpha_fusion: float = 1.0
    alpha_reset: float = 1.0
    huber_delta: float = 1.0

    def __post_init__(self):
        if not self.tau_fusion < self.tau_reset:
            raise InvalidConfig(f"tau_fusion ({self.tau_fusion}) must be < tau_reset ({self.tau_reset})")
        for name in ("alpha_reg", "alpha_disp", "alpha_fusion", "alpha_reset"):
            if getattr(self, name) < 0:
                raise InvalidConfig(f"{name} must be >= 0, got {getattr(self, name)}")
        if not self.huber_delta > 0:
            raise InvalidConfig(f"huber_delta must be > 0, got {self.huber_delta}")


def huber(pred, gt, delta: float = 1.0):
    e = np.abs(np.asarray(pred, dtype=np.float64) - gt)
    return np.where(e <= delta, 0.5 * e * e, delta * (e - 0.5 * delta))


def huber_grad(pred, gt, delta: float = 1.0):
    """d huber / d pred."""
    e = np.asarray(pred, dtype=np.float64) - gt
    return np.clip(e, -delta, delta)


def _cases(e_m, e_s, tau):
    e_m = np.asarray(e_m, dtype=np.float64)
    worse = e_m > e_s + tau
    better = e_m < e_s - tau
    return worse, better


def reset_loss(w_r, e_m, e_s, tau_reset: float = 5.0):
    worse, better = _cases(e_m, e_s, tau_reset)
    w_r = np.asarray(w_r, dtype=np.float64)
    return np.where(worse, w_r, np.where(better, 1.0 - w_r, 0.0))


def reset_loss_grad(w_r, e_m, e_s, tau_reset: float = 5.0):
    worse, better = _cases(e_m, e_s, tau_reset)
    return np.where(worse, 1.0, np.where(better, -1.0, 0.0)) + 0.0 * np.asarray(w_r)


def fusion_loss(w_f, e_m, e_s, tau_fusion: float = 1.0, alpha_reg: float = 0.2):
    worse, better = _cases(e_m, e_s, tau_fusion)
    w_f = np.asarray(w_f, dtype=np.float64)
    return np.where(worse, w_f, np.where(better, 1.0 - w_f, alpha_reg * np.abs(w_f - 0.5)))


def fusion_loss_grad(w_f, e_m, e_s, tau_fusion: float = 1.0, alpha_reg: float = 0.2):
    worse, better = _cases(e_m, e_s, tau_fusion)
    w_f = np.asarray(w_f, dtype=np.float64)
    return np.where(worse, 1.0, np.where(better, -1.0, alpha_reg * np.sign(w_f - 0.5)))


def _mean_mask(x, mask):
    if mask is None:
        return float(np.mean(x))
    mask = np.asarray(mask, dtype=bool)
    n = np.count_nonzero(mask)
    return float(np.sum(x[mask]) / n) if n else 0.0


def combine_terms(l_disp, l_fusion, l_reset, config: LossConfig = LossConfig(), mask=None) -> float:
    """Alpha-weighted sum of per-pixel term maps, averaged over ``mask``."""
    per_pixel = (config.alpha_disp * np.asarray(l_disp, dtype=np.float64) + config.alpha_fusion * l_fusion
                 + config.alpha_reset * l_reset)
    return _mean_mask(np.broadcast_to(per_pixel, np.broadcast(l_disp, l_fusion, l_reset).shape), mask)


def total_loss(d_f, d_gt, w_r, w_f, e_m, e_s, config: LossConfig = LossConfig(), mask=None) -> float:
    """Weighted sum of the three terms, averaged over ``mask`` (all pixels if None)."""
    shape = np.broadcast(d_f, d_gt, w_r, w_f, e_m, e_s).shape
    return combine_terms(np.broadcast_to(huber(d_f, d_gt, config.huber_delta), shape),
                         fusion_loss(w_f, e_m, e_s, config.tau_fusion, config.alpha_reg),
                         reset_loss(w_r, e_m, e_s, config.tau_reset), config, mask)


def total_loss_grad(d_f, d_gt, w_r, w_f, e_m, e_s, config: LossConfig = LossConfig(), mask=None):
    """Per-pixel partials of ``total_loss`` w.r.t. (d_f, w_r, w_f), treating them as independent."""
    shape = np.broadcast(d_f, d_gt, w_r, w_f, e_m, e_s).shape
    if mask is None:
        scale = np.full(shape, 1.0 / max(int(np.prod(shape)), 1))
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), shape)
        n = np.count_nonzero(mask)
        scale = np.where(mask, 1.0 / n if n else 0.0, 0.0)
    g_d = config.alpha_disp * huber_grad(d_f, d_gt, config.huber_delta) * scale
    g_r = config.alpha_reset * reset_loss_grad(w_r, e_m, e_s, config.tau_reset) * scale
    g_f = config.alpha_fusion * fusion_loss_grad(w_f, e_m, e_s, config.tau_fusion, config.alpha_reg) * scale
    return g_d, g_r, g_f
