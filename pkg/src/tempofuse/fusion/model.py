"""Per-pixel weight model: shared ReLU trunk, two sigmoid heads, Adam training, TFW1 files.

Inputs pass through a fixed signed-log squash and a standardisation whose
statistics are stored with the parameters, so sentinel-sized cues do not
swamp the trunk.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import ChannelOrderMismatch, NonFiniteLoss
from ..losses import LossConfig, total_loss, total_loss_grad
from .blend import WeightMaps
from .cues import CUE_CHANNELS, CUE_ORDER_HASH, L1_SENTINEL, CueStack

HIDDEN = 16
MAGIC = b"TFW1"
_LOGIT_CLIP = 30.0


def _squash(x):
    return np.sign(x) * np.log1p(np.abs(x))


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -_LOGIT_CLIP, _LOGIT_CLIP)))


@dataclass(eq=False)
class LogisticWeightModel:
    mu: np.ndarray       # (C,)
    sigma: np.ndarray    # (C,)
    w1: np.ndarray       # (HIDDEN, C)
    b1: np.ndarray       # (HIDDEN,)
    a_r: np.ndarray      # (HIDDEN,)
    c_r: float
    a_f: np.ndarray      # (HIDDEN,)
    c_f: float
    order_hash: int = CUE_ORDER_HASH
    loss_curve: list = field(default_factory=list)

    @classmethod
    def zeros(cls, channels: int = CUE_CHANNELS) -> "LogisticWeightModel":
        return cls(np.zeros(channels), np.ones(channels), np.zeros((HIDDEN, channels)), np.zeros(HIDDEN),
                   np.zeros(HIDDEN), 0.0, np.zeros(HIDDEN), 0.0)

    @classmethod
    def initial(cls, rng, mu=None, sigma=None, channels: int = CUE_CHANNELS) -> "LogisticWeightModel":
        """Random trunk, zero heads: every output starts at exactly 0.5."""
        m = cls.zeros(channels)
        m.w1 = rng.normal(0.0, 1.0 / np.sqrt(channels), size=(HIDDEN, channels))
        m.b1 = np.full(HIDDEN, 0.1)
        if mu is not None:
            m.mu = np.asarray(mu, dtype=np.float64)
        if sigma is not None:
            m.sigma = np.asarray(sigma, dtype=np.float64)
        return m

    @property
    def num_params(self) -> int:
        return self.to_vector().size

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.mu, self.sigma, self.w1.ravel(), self.b1, self.a_r, [self.c_r],
                               self.a_f, [self.c_f]])

    @classmethod
    def from_vector(cls, vec, channels: int = CUE_CHANNELS, order_hash: int = CUE_ORDER_HASH):
        vec = np.asarray(vec, dtype=np.float64)
        c, h = channels, HIDDEN
        sizes = [c, c, h * c, h, h, 1, h, 1]
        if vec.size != sum(sizes):
            raise ValueError(f"expected {sum(sizes)} parameters, got {vec.size}")
        parts = np.split(vec, np.cumsum(sizes)[:-1])
        return cls(parts[0].copy(), parts[1].copy(), parts[2].reshape(h, c).copy(), parts[3].copy(),
                   parts[4].copy(), float(parts[5][0]), parts[6].copy(), float(parts[7][0]), order_hash)

    def rounded(self) -> "LogisticWeightModel":
        """Copy with every parameter rounded to float32, as stored on disk."""
        m = self.from_vector(self.to_vector().astype(np.float32), self.mu.size, self.order_hash)
        m.loss_curve = list(self.loss_curve)
        return m

    def _normalise(self, x):
        return (_squash(x) - self.mu) / self.sigma

    def forward(self, x):
        """x: (N, C) raw cues -> (w_r, w_f, cache)."""
        xn = self._normalise(x)
        pre = xn @ self.w1.T + self.b1
        h = np.maximum(pre, 0.0)
        w_r = _sigmoid(h @ self.a_r + self.c_r)
        w_f = _sigmoid(h @ self.a_f + self.c_f)
        return w_r, w_f, (xn, pre, h)


def predict_weights(model: LogisticWeightModel, cues: CueStack) -> WeightMaps:
    if cues.order_hash != model.order_hash:
        raise ChannelOrderMismatch(f"cue order hash {cues.order_hash:#018x} does not match model "
                                   f"{model.order_hash:#018x}")
    hh, ww = cues.shape
    w_r, w_f, _ = model.forward(cues.data.reshape(-1, cues.data.shape[2]))
    return WeightMaps(w_r.reshape(hh, ww), w_f.reshape(hh, ww))


# --- training -------------------------------------------------------------

@dataclass(eq=False)
class TrainingSample:
    """One supervised frame.  ``mask`` selects pixels with valid ground truth."""

    cues: CueStack
    e_m: np.ndarray
    e_s: np.ndarray
    d_s: np.ndarray
    d_m: np.ndarray
    d_gt: np.ndarray
    mask: np.ndarray

    @classmethod
    def from_maps(cls, cues: CueStack, d_s, d_m, visibility, d_gt, mask) -> "TrainingSample":
        """Errors from the maps; invisible pixels get e_M at the sentinel (no motion estimate)."""
        e_s = np.abs(d_s - d_gt)
        e_m = np.where(np.asarray(visibility, dtype=bool), np.abs(d_m - d_gt), L1_SENTINEL)
        d_m = np.where(np.asarray(visibility, dtype=bool), d_m, d_s)
        return cls(cues, e_m, e_s, np.asarray(d_s, float), d_m, np.asarray(d_gt, float), np.asarray(mask, bool))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 12
    batch_size: int = 4096
    learning_rate: float = 1e-2
    pixels_per_frame: int = 4000
    seed: int = 0


def _flatten(samples, pixels_per_frame: int, rng):
    cols = {k: [] for k in ("x", "e_m", "e_s", "d_s", "d_m", "d_gt")}
    for s in samples:
        idx = np.flatnonzero(s.mask.ravel())
        if pixels_per_frame and idx.size > pixels_per_frame:
            idx = np.sort(rng.choice(idx, pixels_per_frame, replace=False))
        cols["x"].append(s.cues.data.reshape(-1, s.cues.data.shape[2])[idx])
        for k in ("e_m", "e_s", "d_s", "d_m", "d_gt"):
            cols[k].append(np.asarray(getattr(s, k), dtype=np.float64).ravel()[idx])
    return {k: np.concatenate(v) for k, v in cols.items()}


def _loss_and_grads(model, batch, loss_cfg):
    w_r, w_f, (xn, pre, h) = model.forward(batch["x"])
    diff = batch["d_m"] - batch["d_s"]
    d_f = batch["d_s"] + w_r * w_f * diff
    loss = total_loss(d_f, batch["d_gt"], w_r, w_f, batch["e_m"], batch["e_s"], loss_cfg)
    g_d, g_r, g_f = total_loss_grad(d_f, batch["d_gt"], w_r, w_f, batch["e_m"], batch["e_s"], loss_cfg)
    dz_r = (g_d * w_f * diff + g_r) * w_r * (1.0 - w_r)
    dz_f = (g_d * w_r * diff + g_f) * w_f * (1.0 - w_f)
    dh = (np.outer(dz_r, model.a_r) + np.outer(dz_f, model.a_f)) * (pre > 0)
    grads = {"w1": dh.T @ xn, "b1": dh.sum(0), "a_r": h.T @ dz_r, "c_r": dz_r.sum(),
             "a_f": h.T @ dz_f, "c_f": dz_f.sum()}
    return loss, grads


def train_weight_model(samples, loss_cfg: LossConfig = LossConfig(), cfg: TrainConfig = TrainConfig(),
                       init: LogisticWeightModel | None = None) -> LogisticWeightModel:
    """Mini-batch Adam on the mean total loss.

    ``loss_curve`` holds the full-data loss before training followed by the
    mean minibatch loss of every epoch.  Parameters are rounded to float32
    at the end so the in-memory model equals its serialised form.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("train_weight_model needs at least one sample")
    rng = np.random.default_rng(cfg.seed)
    data = _flatten(samples, cfg.pixels_per_frame, rng)
    n = data["x"].shape[0]
    if n == 0:
        raise ValueError("training samples contain no masked pixels")
    if init is None:
        sq = _squash(data["x"])
        sigma = sq.std(axis=0)
        model = LogisticWeightModel.initial(rng, sq.mean(axis=0), np.where(sigma > 1e-6, sigma, 1.0))
    else:
        model = LogisticWeightModel.from_vector(init.to_vector(), init.mu.size, init.order_hash)
    initial, _ = _loss_and_grads(model, data, loss_cfg)
    curve = [float(initial)]
    names = ("w1", "b1", "a_r", "c_r", "a_f", "c_f")
    m1 = {k: np.zeros_like(np.asarray(getattr(model, k), dtype=np.float64)) for k in names}
    m2 = {k: np.zeros_like(v) for k, v in m1.items()}
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses, sizes = [], []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = {k: v[idx] for k, v in data.items()}
            with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported below
                loss, grads = _loss_and_grads(model, batch, loss_cfg)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise NonFiniteLoss(f"non-finite loss {loss} at epoch {epoch}, step {step}; "
                                    f"parameter norm {np.linalg.norm(model.to_vector()):.4g}")
            step += 1
            with np.errstate(over="ignore", invalid="ignore"):
                for k in names:
                    g = grads[k]
                    m1[k] = b1 * m1[k] + (1 - b1) * g
                    m2[k] = b2 * m2[k] + (1 - b2) * g * g
                    upd = cfg.learning_rate * (m1[k] / (1 - b1 ** step)) / (np.sqrt(m2[k] / (1 - b2 ** step)) + eps)
                    setattr(model, k, getattr(model, k) - upd if np.ndim(upd) else float(getattr(model, k) - upd))
            losses.append(loss)
            sizes.append(idx.size)
        curve.append(float(np.average(losses, weights=sizes)))
    model = model.rounded()
    final, _ = _loss_and_grads(model, data, loss_cfg)
    model.loss_curve = curve + [float(final)]
    return model


# --- serialisation --------------------------------------------------------

def save_model(model: LogisticWeightModel, path) -> None:
    """Little-endian: magic, u64 channel-order hash, u32 parameter count, f32 parameters."""
    with open(path, "wb") as f:
        f.write(model_bytes(model))


def model_bytes(model: LogisticWeightModel) -> bytes:
    vec = model.to_vector().astype("<f4")
    return MAGIC + struct.pack("<QI", model.order_hash, vec.size) + vec.tobytes()


def load_model(path, expected_hash: int = CUE_ORDER_HASH) -> LogisticWeightModel:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not a TFW1 model file")
    order_hash, count = struct.unpack("<QI", blob[4:16])
    if order_hash != expected_hash:
        raise ChannelOrderMismatch(f"{path}: channel-order hash {order_hash:#018x}, expected {expected_hash:#018x}")
    vec = np.frombuffer(blob[16:16 + 4 * count], dtype="<f4")
    if vec.size != count:
        raise ValueError(f"{path}: truncated, {vec.size} of {count} parameters")
    return LogisticWeightModel.from_vector(vec.astype(np.float64), CUE_CHANNELS, order_hash)
