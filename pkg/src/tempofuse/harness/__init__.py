"""Experiment configuration, online pipeline and command line."""
from .config import ExperimentConfig, load_config
from .pipeline import FrameProvider, run_sequence, run_suite, train

__all__ = ["ExperimentConfig", "load_config", "FrameProvider", "run_sequence", "run_suite", "train"]
