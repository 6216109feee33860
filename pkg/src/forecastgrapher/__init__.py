"""Multivariate time-series forecasting as node regression on a learned graph."""

from .model import ModelConfig, ModelParams, forward, init_params, param_count
from .training import ForecastReport, TrainConfig, evaluate, run_experiment, train

__all__ = [
    "ForecastReport",
    "ModelConfig",
    "ModelParams",
    "TrainConfig",
    "evaluate",
    "forward",
    "init_params",
    "param_count",
    "run_experiment",
    "train",
]

__version__ = "0.1.0"
