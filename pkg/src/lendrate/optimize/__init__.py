"""Policy training on the relaxed simulator."""

from .adam import Adam, AdamState, adam_step
from .gradient import Evaluation, Sample, draw_sample, evaluate, penalty_and_gradient
from .models import (
    PARAM_NAMES,
    AdaptiveState,
    GridPolicy,
    ParametricModel,
    eval_adaptive_model,
    eval_bilinear_model,
    eval_linear_model,
    utilization_error,
)
from .train import TrainConfig, TrainReport, load_model, save_model, train_parametric, train_policy

__all__ = [
    "PARAM_NAMES",
    "Adam",
    "AdamState",
    "AdaptiveState",
    "Evaluation",
    "GridPolicy",
    "ParametricModel",
    "Sample",
    "TrainConfig",
    "TrainReport",
    "adam_step",
    "draw_sample",
    "eval_adaptive_model",
    "eval_bilinear_model",
    "eval_linear_model",
    "evaluate",
    "load_model",
    "penalty_and_gradient",
    "save_model",
    "train_parametric",
    "train_policy",
    "utilization_error",
]
