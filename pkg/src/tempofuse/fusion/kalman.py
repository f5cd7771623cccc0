"""Per-pixel scalar Kalman filter baseline with a confidence-to-variance calibration."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionMismatch, NonPositiveVariance

DEFAULT_PROCESS_NOISE = 0.25
MIN_VARIANCE = 1e-3


@dataclass(eq=False)
class KalmanState:
    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.variance = np.asarray(self.variance, dtype=np.float64)
        if self.mean.shape != self.variance.shape:
            raise DimensionMismatch(f"mean {self.mean.shape} vs variance {self.variance.shape}")
        if not np.all(self.variance > 0):
            raise NonPositiveVariance("Kalman variance must be > 0 everywhere")


def kalman_update(prior: KalmanState, meas_mean, meas_var, process_noise: float = DEFAULT_PROCESS_NOISE,
                  visible=None) -> tuple[KalmanState, np.ndarray]:
    """One predict + update step.  Returns the posterior and the gain map.

    ``prior`` is the motion-aligned previous posterior.  Where ``visible`` is
    0 the state resets to the measurement (gain 1).
    """
    meas_mean = np.asarray(meas_mean, dtype=np.float64)
    meas_var = np.broadcast_to(np.asarray(meas_var, dtype=np.float64), meas_mean.shape)
    if prior.mean.shape != meas_mean.shape:
        raise DimensionMismatch(f"prior {prior.mean.shape} vs measurement {meas_mean.shape}")
    if not np.all(meas_var > 0):
        raise NonPositiveVariance("measurement variance must be > 0")
    if process_noise < 0:
        raise NonPositiveVariance(f"process noise must be >= 0, got {process_noise}")
    pred_var = prior.variance + process_noise
    gain = pred_var / (pred_var + meas_var)
    mean = prior.mean + gain * (meas_mean - prior.mean)
    var = (1.0 - gain) * pred_var
    if visible is not None:
        vis = np.asarray(visible, dtype=bool)
        gain = np.where(vis, gain, 1.0)
        mean = np.where(vis, mean, meas_mean)
        var = np.where(vis, var, meas_var)
    return KalmanState(mean, np.maximum(var, np.finfo(np.float64).tiny)), gain


@dataclass(frozen=True)
class VarianceCalibration:
    """Measurement variance = max(offset + slope * confidence, MIN_VARIANCE)."""

    offset: float
    slope: float

    def __call__(self, confidence) -> np.ndarray:
        return np.maximum(self.offset + self.slope * np.asarray(confidence, dtype=np.float64), MIN_VARIANCE)

    @classmethod
    def fit(cls, confidence, sq_error) -> "VarianceCalibration":
        """Least-squares affine fit of squared stereo error on the confidence cue."""
        c = np.asarray(confidence, dtype=np.float64).ravel()
        e = np.asarray(sq_error, dtype=np.float64).ravel()
        if c.size < 2 or np.ptp(c) == 0:
            return cls(float(max(e.mean() if e.size else 1.0, MIN_VARIANCE)), 0.0)
        A = np.stack([np.ones_like(c), c], axis=1)
        (offset, slope), *_ = np.linalg.lstsq(A, e, rcond=None)
        return cls(float(offset), float(slope))
