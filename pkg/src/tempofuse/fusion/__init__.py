"""Cue extraction, weight prediction and disparity fusion."""
from .blend import WeightMaps, empirical_best, fuse
from .cues import (CUE_CHANNELS, CUE_NAMES, CUE_ORDER_HASH, CueStack, build_cues, cross_correlation,
                   motion_disparity, self_correlation)
from .kalman import KalmanState, VarianceCalibration, kalman_update
from .model import (LogisticWeightModel, TrainConfig, TrainingSample, load_model, model_bytes, predict_weights,
                    save_model, train_weight_model)

__all__ = [
    "WeightMaps", "empirical_best", "fuse", "CUE_CHANNELS", "CUE_NAMES", "CUE_ORDER_HASH", "CueStack",
    "build_cues", "cross_correlation", "motion_disparity", "self_correlation", "KalmanState",
    "VarianceCalibration", "kalman_update", "LogisticWeightModel", "TrainConfig", "TrainingSample",
    "load_model", "model_bytes", "predict_weights", "save_model", "train_weight_model",
]
