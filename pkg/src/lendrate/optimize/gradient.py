"""Objective and exact gradient of the relaxed simulator on a fixed sample."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import ConfigurationError, RiskParams, UtilizationGrid
from ..sim import SimConfig, initial_levels, path_uniforms, second_differences
from ..sim.engine import _check_probability, kernel_curve, run_kernel
from ..sim.streams import JUMPS
from .models import GridPolicy


@dataclass(frozen=True)
class Sample:
    """Common random numbers for one iteration: start levels and logit-uniforms."""

    level0: np.ndarray
    noise: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.level0.size


def draw_sample(params: RiskParams, config: SimConfig, u0_spec, n_paths: int, stream: tuple) -> Sample:
    paths = np.arange(n_paths)
    level0 = initial_levels(u0_spec, params, config.seed, paths, stream)
    z = path_uniforms(config.seed, stream + (JUMPS,), paths, (config.n_steps, 2, config.jump_trials))
    noise = np.log(z) - np.log1p(-z)
    return Sample(level0, noise)


def penalty_and_gradient(theta: np.ndarray, params: RiskParams, r_min: float, r_max: float):
    """Convexity penalty ``P / N`` of a grid policy and its gradient in ``theta``."""
    n = theta.shape[1]
    grid = UtilizationGrid(params.delta)
    clipped = np.clip(theta, r_min, r_max)
    mask = ((theta >= r_min) & (theta <= r_max)).astype(float)
    idx, d2 = second_differences(clipped, grid, params.u_star)
    neg = (d2 < 0).astype(float)
    value = float(-np.minimum(d2, 0.0).sum() / n)
    g = np.zeros_like(theta)
    # d(-min(d2, 0)) / d theta on the three stencil nodes
    np.add.at(g, idx + 1, -neg)
    np.add.at(g, idx, 2.0 * neg)
    np.add.at(g, idx - 1, -neg)
    return value, g * mask / n


@dataclass(frozen=True)
class Evaluation:
    value: float            # objective minus penalty
    objective: float        # mean of (X - psi - Q) / T
    penalty: float          # P / N (zero for parametric models)
    std_error: float        # of the objective across paths
    gradient: np.ndarray | None


def evaluate(model, curve, params: RiskParams, config: SimConfig, sample: Sample, want_grad: bool = True,
             use_penalty: bool | None = None, curve_knots=None) -> Evaluation:
    """Sampled loss ``L / T - P / N`` and, optionally, its gradient.

    The gradient is exact for the relaxed sample: it is the reverse sweep of
    the very operations that produced ``value``.
    """
    if config.mode != "relaxed":
        raise ConfigurationError("gradients exist only for the relaxed simulator")
    _check_probability(curve, params, config)
    kind, theta = model.kernel_spec(params, config.n_steps)
    knots = kernel_curve(curve, params) if curve_knots is None else curve_knots
    obj, _, _, _, grad = run_kernel(kind, theta, knots, params, config, sample.level0, sample.noise, want_grad)
    n = obj.size
    mean = float(obj.mean())
    se = float(obj.std() / np.sqrt(n))
    use_penalty = isinstance(model, GridPolicy) if use_penalty is None else use_penalty
    pen = 0.0
    g = grad / n if want_grad else None
    if use_penalty:
        pen, pg = penalty_and_gradient(model.theta, params, model.r_min, model.r_max)
        if want_grad:
            g = g - pg.ravel()
    if want_grad and isinstance(model, GridPolicy):
        g = g.reshape(model.theta.shape)
    return Evaluation(mean - pen, mean, pen, se, g)
