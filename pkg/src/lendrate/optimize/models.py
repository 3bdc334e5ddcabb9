"""Rate policies that can be trained: a tabular grid and three parametric curves."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import ConfigurationError, RateSurface, RiskParams, TimeGrid, UtilizationGrid
from ..sim import _kernel

VARIANTS = ("linear", "bilinear", "adaptive")
PARAM_NAMES = {
    "linear": ("r_base", "r_slope1"),
    "bilinear": ("r_base", "r_slope1", "r_slope2"),
    "adaptive": ("r_target_0", "k_p", "k_d1", "k_d2"),
}
_KINDS = {"linear": _kernel.LINEAR, "bilinear": _kernel.BILINEAR, "adaptive": _kernel.ADAPTIVE}
_MIN_TARGET = 1e-8


# ----------------------------------------------------------------------------
# grid policy
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class GridPolicy:
    """One free rate per lattice node and time step, shape ``(M + 1, N)``.

    Off-lattice utilization (relaxed paths) is interpolated linearly between
    the two neighbouring nodes.
    """

    theta: np.ndarray
    r_min: float
    r_max: float

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        if theta.ndim != 2 or theta.shape[0] < 2:
            raise ConfigurationError("grid policy parameters must be a (nodes, steps) matrix")
        if not np.all(np.isfinite(theta)):
            raise ConfigurationError("grid policy parameters must be finite")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def linear_init(cls, params: RiskParams, n_steps: int) -> "GridPolicy":
        """``r_min + u (r_max - r_min)`` at every time step."""
        u = UtilizationGrid(params.delta).nodes
        col = params.r_min + u * (params.r_max - params.r_min)
        return cls(np.repeat(col[:, None], n_steps, axis=1), params.r_min, params.r_max)

    @property
    def n_steps(self) -> int:
        return self.theta.shape[1]

    def with_theta(self, theta) -> "GridPolicy":
        return GridPolicy(np.asarray(theta).reshape(self.theta.shape), self.r_min, self.r_max)

    def projected(self) -> "GridPolicy":
        """Parameters clipped onto the rate bounds."""
        return self.with_theta(np.clip(self.theta, self.r_min, self.r_max))

    def initial_state(self, n_paths, times):
        return None

    def rate(self, u, step, state):
        m = self.theta.shape[0] - 1
        level = np.asarray(u, dtype=float) * m
        near = np.rint(level)
        level = np.where(np.abs(level - near) < 1e-9, near, level)
        b = np.clip(np.floor(level), 0, m - 1).astype(np.int64)
        w = level - b
        col = self.theta[:, step]
        r = (1.0 - w) * col[b] + w * col[b + 1]
        return np.clip(r, self.r_min, self.r_max), state

    def kernel_spec(self, params: RiskParams, n_steps: int):
        if self.theta.shape != (params.n_levels + 1, n_steps):
            raise ConfigurationError(
                f"grid policy shape {self.theta.shape} does not match lattice ({params.n_levels + 1}, {n_steps})"
            )
        return _kernel.GRID, self.theta.ravel()

    def surface(self, params: RiskParams) -> RateSurface:
        grid = UtilizationGrid(params.delta)
        times = TimeGrid(self.n_steps, params.horizon_T)
        return RateSurface(grid, times, np.clip(self.theta, self.r_min, self.r_max))

    @classmethod
    def from_surface(cls, surface: RateSurface, r_min: float, r_max: float) -> "GridPolicy":
        return cls(surface.values[:, : surface.times.n_steps], r_min, r_max)


# ----------------------------------------------------------------------------
# parametric curves
# ----------------------------------------------------------------------------

def eval_linear_model(m, u, u_star: float):
    out = m[0] + np.asarray(u, dtype=float) / u_star * m[1]
    return float(out) if out.ndim == 0 else out


def eval_bilinear_model(m, u, u_star: float):
    """Kinked at ``u_star``; continuous there."""
    r_base, s1, s2 = m[0], m[1], m[2]
    u = np.asarray(u, dtype=float)
    below = r_base + u / u_star * s1
    if u_star >= 1.0:
        above = np.full_like(u, r_base + s1)
    else:
        above = r_base + s1 + (u - u_star) / (1.0 - u_star) * s2
    out = np.where(u < u_star, below, above)
    return float(out) if out.ndim == 0 else out


def utilization_error(u, u_star: float):
    u = np.asarray(u, dtype=float)
    below = (u - u_star) / u_star
    above = (u - u_star) / (1.0 - u_star) if u_star < 1.0 else np.zeros_like(u)
    return np.where(u < u_star, below, above)


@dataclass(frozen=True)
class AdaptiveState:
    r_target: np.ndarray
    t_last: float | None
    u_last: np.ndarray | None


def eval_adaptive_model(m, u, t: float, state: AdaptiveState | None, u_star: float):
    """Rate of the adaptive curve at time ``t``; returns ``(rate, new_state)``.

    The target rate grows or decays exponentially at speed ``k_p`` times the
    utilization error seen at the previous update.
    """
    r0, kp, kd1, kd2 = m[0], m[1], m[2], m[3]
    u = np.asarray(u, dtype=float)
    if state is None or state.t_last is None:
        target = np.full(u.shape, float(r0))
    else:
        if t < state.t_last:
            raise ConfigurationError("adaptive model cannot move back in time")
        target = state.r_target * np.exp(kp * utilization_error(state.u_last, u_star) * (t - state.t_last))
    err = utilization_error(u, u_star)
    curve = np.where(u < u_star, (1.0 - kd1) * err + 1.0, (kd2 - 1.0) * err + 1.0)
    rate = target * curve
    return (float(rate) if rate.ndim == 0 else rate), AdaptiveState(target, t, u.copy())


@dataclass(frozen=True)
class ParametricModel:
    variant: str
    values: np.ndarray
    u_star: float
    r_min: float = 0.0
    r_max: float = np.inf

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown model variant {self.variant!r}")
        vals = np.array(self.values, dtype=float)
        if vals.shape != (len(PARAM_NAMES[self.variant]),):
            raise ConfigurationError(f"{self.variant} model needs parameters {PARAM_NAMES[self.variant]}")
        if not np.all(np.isfinite(vals)):
            raise ConfigurationError("model parameters must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_dict(cls, variant: str, values: dict, u_star: float, r_min: float = 0.0, r_max: float = np.inf):
        missing = set(PARAM_NAMES.get(variant, ())) - set(values)
        if missing:
            raise ConfigurationError(f"missing parameters {sorted(missing)} for {variant}")
        return cls(variant, [values[k] for k in PARAM_NAMES[variant]], u_star, r_min, r_max)

    def as_dict(self) -> dict:
        return {k: float(v) for k, v in zip(PARAM_NAMES[self.variant], self.values)}

    def with_values(self, values) -> "ParametricModel":
        return ParametricModel(self.variant, values, self.u_star, self.r_min, self.r_max)

    def projected(self) -> "ParametricModel":
        vals = np.maximum(self.values, 0.0)
        if self.variant == "adaptive":
            vals[0] = max(vals[0], _MIN_TARGET)
        return self.with_values(vals)

    # policy protocol
    def initial_state(self, n_paths, times):
        return (None, times)

    def rate(self, u, step, state):
        adaptive_state, times = state
        if self.variant == "linear":
            r = eval_linear_model(self.values, u, self.u_star)
        elif self.variant == "bilinear":
            r = eval_bilinear_model(self.values, u, self.u_star)
        else:
            r, adaptive_state = eval_adaptive_model(self.values, u, times.times[step], adaptive_state, self.u_star)
        return np.clip(r, self.r_min, self.r_max), (adaptive_state, times)

    def kernel_spec(self, params: RiskParams, n_steps: int):
        if abs(params.u_star - self.u_star) > 1e-12:
            raise ConfigurationError("model target utilization differs from the risk parameters")
        return _KINDS[self.variant], np.asarray(self.values, dtype=float)

    def surface(self, params: RiskParams, n_steps: int) -> RateSurface:
        """Rates at the lattice nodes (time-invariant variants, or the adaptive curve at ``t = 0``)."""
        grid = UtilizationGrid(params.delta)
        times = TimeGrid(n_steps, params.horizon_T)
        r, _ = self.rate(grid.nodes, 0, self.initial_state(len(grid), times))
        return RateSurface(grid, times, np.repeat(np.asarray(r)[:, None], n_steps, axis=1))
