"""Robust selective fine-tuning: risk-masked AdamW and its analysis tools."""

from .autograd import RngStream, ShapeError, Tape, backward, dropout_mask
from .estimator import RoseClassifier
from .masking import Mask, RiskReport, RoseConfig, calculate_mask
from .model import ModelSpec, ParamSet, init_params, predict
from .optimizer import OptimizerState, StepReport, adamw_step, init_state, rose_step

__version__ = "0.1.0"

__all__ = [
    "Mask",
    "ModelSpec",
    "OptimizerState",
    "ParamSet",
    "RiskReport",
    "RngStream",
    "RoseClassifier",
    "RoseConfig",
    "ShapeError",
    "StepReport",
    "Tape",
    "adamw_step",
    "backward",
    "calculate_mask",
    "dropout_mask",
    "init_params",
    "init_state",
    "predict",
    "rose_step",
]
