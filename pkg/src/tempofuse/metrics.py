"""Temporal and per-frame evaluation metrics plus report aggregation and export.

Thresholds are strict (``>``).  Tracing samples the frame-t maps bilinearly
at the ground-truth flow endpoint; a pair survives only if every bilinear
neighbour with non-zero weight lies inside the image and the frame-t mask.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import DimensionMismatch, EmptyMask, EmptyPairSet

MAX_DISPARITY = 210.0
MAX_SCENE_FLOW = 210.0
TEPE_EPS = 1e-3


def validity_mask(d_gt, sceneflow_gt) -> np.ndarray:
    """1 <= d_gt <= 210 and |scene flow| <= 210 px (any trailing vector size)."""
    d_gt = np.asarray(d_gt, dtype=np.float64)
    sf = np.asarray(sceneflow_gt, dtype=np.float64)
    if sf.shape[:2] != d_gt.shape:
        raise DimensionMismatch(f"scene flow {sf.shape} vs disparity {d_gt.shape}")
    norm = np.linalg.norm(sf, axis=-1) if sf.ndim == 3 else np.abs(sf)
    return (d_gt >= 1.0) & (d_gt <= MAX_DISPARITY) & (norm <= MAX_SCENE_FLOW)


@dataclass(eq=False)
class TracedPairs:
    """Struct-of-arrays of traced correspondences t-1 -> t."""

    u0: np.ndarray
    v0: np.ndarray
    u1: np.ndarray
    v1: np.ndarray
    pred_prev: np.ndarray
    pred_curr: np.ndarray
    gt_prev: np.ndarray
    gt_curr: np.ndarray

    def __len__(self):
        return self.u0.size

    @property
    def delta(self) -> np.ndarray:
        return self.pred_curr - self.pred_prev

    @property
    def delta_gt(self) -> np.ndarray:
        return self.gt_curr - self.gt_prev


def _bilinear_taps(x, y, w, h):
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    ax, ay = x - x0, y - y0
    taps = []
    for dy, wy in ((0, 1 - ay), (1, ay)):
        for dx, wx in ((0, 1 - ax), (1, ax)):
            taps.append((y0 + dy, x0 + dx, wy * wx))
    return taps


def trace(flow_gt, d_pred_prev, d_pred_curr, d_gt_prev, d_gt_curr, mask_prev=None, mask_curr=None) -> TracedPairs:
    """Follow ground-truth flow from every ``mask_prev`` pixel into frame t."""
    flow_gt = np.asarray(flow_gt, dtype=np.float64)
    h, w = np.shape(d_pred_prev)
    if flow_gt.shape != (h, w, 2):
        raise DimensionMismatch(f"flow {flow_gt.shape} vs maps {(h, w)}")
    mask_prev = np.ones((h, w), bool) if mask_prev is None else np.asarray(mask_prev, dtype=bool)
    mask_curr = np.ones((h, w), bool) if mask_curr is None else np.asarray(mask_curr, dtype=bool)
    v0, u0 = np.nonzero(mask_prev)
    x = u0 + flow_gt[v0, u0, 0]
    y = v0 + flow_gt[v0, u0, 1]
    keep = np.isfinite(x) & np.isfinite(y)
    v0, u0, x, y = v0[keep], u0[keep], x[keep], y[keep]
    ok = np.ones(x.shape, dtype=bool)
    taps = _bilinear_taps(x, y, w, h)
    for r, c, wt in taps:
        inside = (r >= 0) & (r < h) & (c >= 0) & (c < w)
        rc, cc = np.clip(r, 0, h - 1), np.clip(c, 0, w - 1)
        ok &= (wt == 0) | (inside & mask_curr[rc, cc])

    def sample(img):
        img = np.asarray(img, dtype=np.float64)
        out = np.zeros(x.shape)
        for r, c, wt in taps:
            out += np.where(wt > 0, wt * img[np.clip(r, 0, h - 1), np.clip(c, 0, w - 1)], 0.0)
        return out[ok]

    return TracedPairs(u0[ok].astype(np.float64), v0[ok].astype(np.float64), x[ok], y[ok],
                       np.asarray(d_pred_prev, dtype=np.float64)[v0[ok], u0[ok]], sample(d_pred_curr),
                       np.asarray(d_gt_prev, dtype=np.float64)[v0[ok], u0[ok]], sample(d_gt_curr))


def tepe(pairs: TracedPairs) -> tuple[float, float, float, float]:
    """(TEPE, delta3px_t, TEPE_r, delta100%_t)."""
    if len(pairs) == 0:
        raise EmptyPairSet("no traced pairs to evaluate")
    err = np.abs(pairs.delta - pairs.delta_gt)
    ratio = err / (np.abs(pairs.delta_gt) + TEPE_EPS)
    return float(err.mean()), float(np.mean(err > 3.0)), float(ratio.mean()), float(np.mean(ratio > 1.0))


def epe(d_pred, d_gt, mask) -> tuple[float, float]:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyMask("EPE mask is empty")
    err = np.abs(np.asarray(d_pred, dtype=np.float64) - d_gt)[mask]
    return float(err.mean()), float(np.mean(err > 3.0))


def fepe(flow_pred, flow_gt, mask, kind: str = "optical") -> tuple[float, float]:
    """Mean end-point norm and fraction > 1.

    ``optical`` compares the first two components; ``scene`` compares all
    components in whatever unit they are given.
    """
    if kind not in ("optical", "scene"):
        raise ValueError(f"kind must be 'optical' or 'scene', got {kind!r}")
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyMask("FEPE mask is empty")
    diff = np.asarray(flow_pred, dtype=np.float64) - flow_gt
    if kind == "optical":
        diff = diff[..., :2]
    err = np.linalg.norm(diff, axis=-1)[mask]
    return float(err.mean()), float(np.mean(err > 1.0))


METRIC_COUNTS = {
    "tepe": "n_pairs", "tepe_3px": "n_pairs", "tepe_r": "n_pairs", "tepe_r_100pct": "n_pairs",
    "epe": "n_pixels", "d3px": "n_pixels",
    "fepe_of": "n_flow", "fepe_of_1px": "n_flow", "fepe_sf": "n_flow", "fepe_sf_1px": "n_flow",
    "fepe_sf_m": "n_flow",
}


@dataclass
class FrameReport:
    """Metrics of one frame; temporal/flow entries are NaN (count 0) at t=0."""

    frame: int
    epe: float = math.nan
    d3px: float = math.nan
    tepe: float = math.nan
    tepe_3px: float = math.nan
    tepe_r: float = math.nan
    tepe_r_100pct: float = math.nan
    fepe_of: float = math.nan
    fepe_of_1px: float = math.nan
    fepe_sf: float = math.nan
    fepe_sf_1px: float = math.nan
    fepe_sf_m: float = math.nan
    n_pixels: int = 0
    n_pairs: int = 0
    n_flow: int = 0


@dataclass
class MetricReport:
    epe: float = math.nan
    d3px: float = math.nan
    tepe: float = math.nan
    tepe_3px: float = math.nan
    tepe_r: float = math.nan
    tepe_r_100pct: float = math.nan
    fepe_of: float = math.nan
    fepe_of_1px: float = math.nan
    fepe_sf: float = math.nan
    fepe_sf_1px: float = math.nan
    fepe_sf_m: float = math.nan
    n_pixels: int = 0
    n_pairs: int = 0
    n_flow: int = 0
    frames: list = field(default_factory=list)

    def summary(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "frames"}

    def to_dict(self) -> dict:
        out = self.summary()
        out["frames"] = [asdict(fr) for fr in self.frames]
        return out


def aggregate(frames) -> MetricReport:
    """Pixel-count-weighted means over frames, summed in frame order."""
    frames = list(frames)
    if not frames:
        raise ValueError("aggregate needs at least one frame report")
    out = MetricReport(frames=frames)
    for count in ("n_pixels", "n_pairs", "n_flow"):
        setattr(out, count, int(sum(getattr(fr, count) for fr in frames)))
    for metric, count in METRIC_COUNTS.items():
        total = getattr(out, count)
        if total == 0:
            continue
        acc = 0.0
        for fr in frames:
            n = getattr(fr, count)
            if n:
                acc += n * getattr(fr, metric)
        setattr(out, metric, acc / total)
    return out


def _clean(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_clean(v) for v in x]
    return x


def to_json(reports: dict) -> str:
    """``reports`` maps a key (method or method/sequence) to a MetricReport; NaN -> null."""
    payload = {k: _clean(r.to_dict() if isinstance(r, MetricReport) else r) for k, r in reports.items()}
    return json.dumps(payload, indent=2, sort_keys=True)


SUMMARY_COLUMNS = [f.name for f in fields(MetricReport) if f.name != "frames"]


def to_csv(rows) -> str:
    """``rows``: iterable of (method, sequence, MetricReport); one CSV row each."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", "sequence", *SUMMARY_COLUMNS])
    for method, sequence, report in rows:
        writer.writerow([method, sequence, *(_fmt(getattr(report, c)) for c in SUMMARY_COLUMNS)])
    return buf.getvalue()


def _fmt(x):
    if isinstance(x, float):
        return "" if not math.isfinite(x) else repr(x)
    return str(x)
