"""Sturm-Liouville basis functions along learned field lines, as a trainable predictor."""

from .errors import (BracketFailure, ConfigError, DSLError, MaxStepsExceeded, NoEventDetected,
                     ShapeMismatch, SingularJacobian, StartOnBoundary, StepSizeUnderflow, TrainingAborted)
from .model import DslModel, SolverConfig, predict, predict_batch

__all__ = [
    "BracketFailure", "ConfigError", "DSLError", "MaxStepsExceeded", "NoEventDetected", "ShapeMismatch",
    "SingularJacobian", "StartOnBoundary", "StepSizeUnderflow", "TrainingAborted",
    "DslModel", "SolverConfig", "predict", "predict_batch",
]

__version__ = "0.1.0"
