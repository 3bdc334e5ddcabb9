"""Monte-Carlo simulation of the utilization process."""

from .engine import (
    ConstantPolicy,
    FunctionPolicy,
    Policy,
    SimConfig,
    SurfacePolicy,
    TrajectoryBatch,
    convexity_penalty,
    initial_levels,
    max_probability,
    objective,
    second_differences,
    simulate_batch,
    write_trajectories,
)
from .jumps import hard_sigmoid, jump_counts, logit
from .streams import path_generator, path_uniforms

__all__ = [
    "ConstantPolicy",
    "FunctionPolicy",
    "Policy",
    "SimConfig",
    "SurfacePolicy",
    "TrajectoryBatch",
    "convexity_penalty",
    "hard_sigmoid",
    "initial_levels",
    "jump_counts",
    "logit",
    "max_probability",
    "objective",
    "path_generator",
    "path_uniforms",
    "second_differences",
    "simulate_batch",
    "write_trajectories",
]
