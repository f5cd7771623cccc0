"""Per-pixel input cues for the weight model."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from ..errors import DimensionMismatch
from ..geometry import MemoryState
from ..stereo import FEATURE_CHANNELS, StereoResult, disparity_confidence

L1_SENTINEL = 210.0
DOT_SENTINEL = 0.0
WINDOW = 3
DILATION = 2


def _names():
    names = [f"stereo_conf_{o}" for o in ("m1", "0", "p1")]
    names += [f"motion_conf_{o}" for o in ("m1", "0", "p1")]
    offs = _offsets(WINDOW, DILATION)
    ring = [(dy, dx) for dy, dx in offs if (dy, dx) != (0, 0)]
    names += [f"self_disp_{dy}_{dx}" for dy, dx in ring]
    names += [f"self_feat_{dy}_{dx}" for dy, dx in ring]
    names += [f"cross_disp_{dy}_{dx}" for dy, dx in offs]
    names += [f"cross_feat_{dy}_{dx}" for dy, dx in offs]
    names += ["flow_magnitude", "flow_confidence", "visibility"]
    names += [f"feature_{k}" for k in range(FEATURE_CHANNELS)]
    return tuple(names)


def _offsets(window: int, dilation: int):
    r = window // 2
    return [(dy * dilation, dx * dilation) for dy in range(-r, r + 1) for dx in range(-r, r + 1)]


def _shift(a, dy, dx):
    """a[y + dy, x + dx] with replicate padding."""
    h, w = a.shape[:2]
    rows = np.clip(np.arange(h) + dy, 0, h - 1)
    cols = np.clip(np.arange(w) + dx, 0, w - 1)
    return a[rows[:, None], cols[None, :]]


def _as3(a):
    a = np.asarray(a, dtype=np.float64)
    return a[..., None] if a.ndim == 2 else a


def _corr(p, q, kind):
    if kind == "l1":
        return np.abs(p - q).mean(axis=-1)
    if kind == "dot":
        return (p * q).mean(axis=-1)
    raise ValueError(f"kind must be 'l1' or 'dot', got {kind!r}")


def self_correlation(values, window: int = WINDOW, dilation: int = DILATION, kind: str = "l1") -> np.ndarray:
    """Pixel vs its W^2-1 dilated neighbours (centre excluded), H x W x (W^2-1).

    ``l1`` is the channel-mean absolute difference (disparity), ``dot`` the
    channel-mean product (features).
    """
    if window % 2 == 0 or window < 1:
        raise ValueError(f"window must be odd, got {window}")
    if dilation < 1:
        raise ValueError(f"dilation must be >= 1, got {dilation}")
    x = _as3(values)
    offs = [o for o in _offsets(window, dilation) if o != (0, 0)]
    return np.stack([_corr(x, _shift(x, dy, dx), kind) for dy, dx in offs], axis=-1)


def cross_correlation(curr, prev_aligned, visibility=None, window: int = WINDOW, dilation: int = DILATION,
                      kind: str = "l1") -> np.ndarray:
    """Pixel of ``curr`` vs the W x W dilated patch of ``prev_aligned`` at the same location.

    Patch entries whose previous pixel is invisible read the sentinel (210 for
    ``l1``, 0 for ``dot``).
    """
    if window % 2 == 0 or window < 1:
        raise ValueError(f"window must be odd, got {window}")
    if dilation < 1:
        raise ValueError(f"dilation must be >= 1, got {dilation}")
    c, p = _as3(curr), _as3(prev_aligned)
    if c.shape != p.shape:
        raise DimensionMismatch(f"curr {c.shape} vs prev_aligned {p.shape}")
    vis = np.ones(c.shape[:2], bool) if visibility is None else np.asarray(visibility, dtype=bool)
    sentinel = L1_SENTINEL if kind == "l1" else DOT_SENTINEL
    out = []
    for dy, dx in _offsets(window, dilation):
        val = _corr(c, _shift(p, dy, dx), kind)
        out.append(np.where(_shift(vis, dy, dx), val, sentinel))
    return np.stack(out, axis=-1)


CUE_NAMES = _names()
CUE_CHANNELS = len(CUE_NAMES)
CUE_ORDER_HASH = int.from_bytes(hashlib.sha256("\n".join(CUE_NAMES).encode()).digest()[:8], "little")


@dataclass(eq=False)
class CueStack:
    data: np.ndarray  # H x W x 53
    order_hash: int = CUE_ORDER_HASH

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[2] != CUE_CHANNELS:
            raise DimensionMismatch(f"cue stack must be H x W x {CUE_CHANNELS}, got {self.data.shape}")

    @property
    def shape(self):
        return self.data.shape[:2]

    def channel(self, name: str) -> np.ndarray:
        return self.data[..., CUE_NAMES.index(name)]

    def group(self, prefix: str) -> np.ndarray:
        idx = [i for i, n in enumerate(CUE_NAMES) if n.startswith(prefix)]
        return self.data[..., idx]


def motion_disparity(m_motion: MemoryState, d_stereo) -> np.ndarray:
    """Aligned disparity with splat holes filled by the stereo estimate."""
    vis = m_motion.visibility.astype(bool)
    return np.where(vis, m_motion.disparity, d_stereo)


def build_cues(m_motion: MemoryState, m_stereo: StereoResult) -> CueStack:
    d_s = np.asarray(m_stereo.disparity, dtype=np.float64)
    if m_motion.shape != d_s.shape:
        raise DimensionMismatch(f"motion state {m_motion.shape} vs stereo {d_s.shape}")
    if m_motion.features.shape[2] not in (0, FEATURE_CHANNELS):
        raise DimensionMismatch(f"motion features must have 0 or {FEATURE_CHANNELS} channels")
    vis = m_motion.visibility.astype(bool)
    d_m = motion_disparity(m_motion, d_s)
    feats = m_stereo.left_features
    prev_feats = m_motion.features if m_motion.features.shape[2] else np.zeros_like(feats)
    parts = [
        disparity_confidence(feats, m_stereo.right_features, d_s),
        disparity_confidence(feats, m_stereo.right_features, d_m),
        self_correlation(d_s, kind="l1"),
        self_correlation(feats, kind="dot"),
        cross_correlation(d_s, m_motion.disparity, vis, kind="l1"),
        cross_correlation(feats, prev_feats, vis, kind="dot"),
        m_motion.flow_magnitude[..., None],
        m_motion.flow_confidence[..., None],
        vis[..., None].astype(np.float64),
        feats,
    ]
    data = np.concatenate(parts, axis=-1)
    return CueStack(np.where(np.isfinite(data), data, L1_SENTINEL))
