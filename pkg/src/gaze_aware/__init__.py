"""Attended-awareness estimation from noisy gaze, saliency and optic flow."""

from gaze_aware.config import (
    Config,
    EstimatorConfig,
    LossWeights,
    MeanShiftConfig,
    NoiseModel,
)
from gaze_aware.grid import FlowField, GazeFrame

__all__ = [
    "Config",
    "EstimatorConfig",
    "FlowField",
    "GazeFrame",
    "LossWeights",
    "MeanShiftConfig",
    "NoiseModel",
]

__version__ = "0.1.0"
