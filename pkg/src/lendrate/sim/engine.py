"""Monte-Carlo engine for the utilization point process.

Each step the policy sets a rate from the current utilization, wealth earns
``r U tau``, the running penalty grows by ``phi (r - r_bar)**2 tau``, and
utilization moves by ``delta`` times the net jump count of ``J`` trials.
Utilization is tracked as a lattice level ``l = u / delta``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol

import numpy as np

from ..core import ConfigurationError, RateSurface, RiskParams, TimeGrid, UtilizationGrid, terminal_penalty
from ..intensity import as_piecewise, intensities
from . import _kernel
from .jumps import jump_counts
from .streams import INITIAL, JUMPS, path_uniforms

CHUNK_PATHS = 4096


@dataclass(frozen=True)
class SimConfig:
    n_steps: int = 100
    jump_trials: int = 10
    epsilon: float = 0.25
    mode: str = "exact"
    seed: int = 0
    batch_size: int = 10_000
    stream: tuple = ()

    def __post_init__(self):
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ConfigurationError(f"n_steps must be a positive integer, got {self.n_steps!r}")
        if int(self.jump_trials) != self.jump_trials or self.jump_trials < 1:
            raise ConfigurationError(f"jump_trials must be a positive integer, got {self.jump_trials!r}")
        if self.mode not in ("exact", "relaxed"):
            raise ConfigurationError(f"mode must be 'exact' or 'relaxed', got {self.mode!r}")
        if not self.epsilon > 0:
            raise ConfigurationError(f"epsilon must be > 0, got {self.epsilon!r}")
        if self.epsilon > 0.5:
            warnings.warn(f"epsilon={self.epsilon} is wide for the hard-sigmoid relaxation", stacklevel=2)
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be a positive integer, got {self.batch_size!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigurationError("seed must fit in 64 unsigned bits")


class Policy(Protocol):
    """Anything that maps utilization at a step to a rate.

    ``state`` carries per-path memory (the adaptive model); stateless
    policies return it unchanged.
    """

    def initial_state(self, n_paths: int, times: TimeGrid) -> Any: ...

    def rate(self, u: np.ndarray, step: int, state: Any) -> tuple[np.ndarray, Any]: ...


@dataclass(frozen=True)
class FunctionPolicy:
    fn: Callable[[np.ndarray, int], np.ndarray]

    def initial_state(self, n_paths, times):
        return None

    def rate(self, u, step, state):
        return np.broadcast_to(np.asarray(self.fn(u, step), dtype=float), np.shape(u)), state


@dataclass(frozen=True)
class ConstantPolicy:
    value: float

    def initial_state(self, n_paths, times):
        return None

    def rate(self, u, step, state):
        return np.full(np.shape(u), self.value), state

    def kernel_spec(self, params, n_steps):
        return _kernel.LINEAR, np.array([self.value, 0.0])


@dataclass(frozen=True)
class SurfacePolicy:
    """Rates read off a surface at lattice nodes (linear in ``u`` between them)."""

    surface: RateSurface

    def initial_state(self, n_paths, times):
        return None

    def rate(self, u, step, state):
        return np.interp(u, self.surface.grid.nodes, self.surface.values[:, step]), state

    def kernel_spec(self, params, n_steps):
        vals = self.surface.values[:, :n_steps]
        return _kernel.GRID, np.ascontiguousarray(vals, dtype=float).ravel()


@dataclass(frozen=True)
class TrajectoryBatch:
    """Utilization ``u``, wealth ``x`` and running penalty ``q`` per path.

    Columns correspond to the steps in ``steps``: all of ``0..N`` for full
    recording or just ``(0, N)`` otherwise.  ``rates`` (full recording only)
    holds the clipped rate applied at each step.
    """

    u: np.ndarray
    x: np.ndarray
    q: np.ndarray
    steps: np.ndarray
    params: RiskParams
    config: SimConfig
    rates: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_paths(self) -> int:
        return self.u.shape[0]

    @property
    def u_T(self) -> np.ndarray:
        return self.u[:, -1]

    @property
    def x_T(self) -> np.ndarray:
        return self.x[:, -1]

    @property
    def q_T(self) -> np.ndarray:
        return self.q[:, -1]

    @property
    def u0(self) -> np.ndarray:
        return self.u[:, 0]


def initial_levels(u0_spec, params: RiskParams, seed: int, paths, stream: tuple = ()) -> np.ndarray:
    """Starting lattice levels: a fixed lattice value or ``"uniform"`` on ``{delta, ..., 1 - delta}``."""
    m = params.n_levels
    paths = np.asarray(paths, dtype=np.int64)
    if isinstance(u0_spec, str):
        if u0_spec != "uniform":
            raise ConfigurationError(f"u0 must be a lattice value or 'uniform', got {u0_spec!r}")
        if m < 2:
            raise ConfigurationError("uniform start needs at least one interior node")
        z = path_uniforms(seed, stream + (INITIAL,), paths, (1,))[:, 0]
        return (1 + np.floor(z * (m - 1))).astype(float)
    level = UtilizationGrid(params.delta).index_of(float(u0_spec))
    return np.full(paths.size, float(level))


def kernel_curve(curve, params: RiskParams):
    pw = as_piecewise(curve, params.r_min, params.r_max)
    return (np.ascontiguousarray(pw.rates), np.ascontiguousarray(pw.lambda_plus),
            np.ascontiguousarray(pw.lambda_minus))


def _check_probability(curve, params, config):
    p = max_probability(curve, params, params.horizon_T / config.n_steps, config.jump_trials)
    if p > 1.0 + 1e-12:
        raise ConfigurationError(
            f"highest jump probability {p:.4g} exceeds 1 for N={config.n_steps}, J={config.jump_trials}; "
            "increase N or J"
        )


def run_kernel(kind, theta, curve_knots, params: RiskParams, config: SimConfig, level0, noise,
               want_grad: bool):
    """Thin typed wrapper around the compiled rollout."""
    m = params.n_levels
    tau = params.horizon_T / config.n_steps
    rates, lp, lm = curve_knots
    return _kernel.rollout(
        int(kind), np.ascontiguousarray(theta, dtype=float), m, params.delta, config.n_steps, tau,
        params.horizon_T, params.phi, params.r_bar, params.eta, params.u_star, params.r_min, params.r_max,
        rates, lp, lm, np.ascontiguousarray(level0, dtype=float), noise, config.mode == "relaxed",
        config.epsilon, want_grad,
    )


def simulate_batch(policy, curve, params: RiskParams, config: SimConfig, u0_spec, n_paths: int | None = None,
                   record: str = "terminal", engine: str = "auto") -> TrajectoryBatch:
    """Simulate ``n_paths`` paths (default ``config.batch_size``).

    Policies exposing ``kernel_spec`` run through the compiled rollout unless
    full trajectories are requested; anything else uses the numpy loop.  Both
    read the same per-path uniforms.
    """
    n_paths = config.batch_size if n_paths is None else int(n_paths)
    if record not in ("terminal", "full"):
        raise ConfigurationError("record must be 'terminal' or 'full'")
    _check_probability(curve, params, config)
    use_kernel = engine == "kernel" or (
        engine == "auto" and record == "terminal" and hasattr(policy, "kernel_spec"))
    times = TimeGrid(config.n_steps, params.horizon_T)
    n = config.n_steps
    J = config.jump_trials
    parts = []
    for start in range(0, n_paths, CHUNK_PATHS):
        paths = np.arange(start, min(start + CHUNK_PATHS, n_paths))
        level0 = initial_levels(u0_spec, params, config.seed, paths, config.stream)
        z = path_uniforms(config.seed, config.stream + (JUMPS,), paths, (n, 2, J))
        if use_kernel:
            kind, theta = policy.kernel_spec(params, n)
            noise = z if config.mode == "exact" else np.log(z) - np.log1p(-z)
            _, lev_T, x_T, q_T, _ = run_kernel(kind, theta, kernel_curve(curve, params), params, config,
                                               level0, noise, False)
            u_cols = np.stack([_level_to_u(level0, params), _level_to_u(lev_T, params)], axis=1)
            x_cols = np.stack([np.zeros_like(x_T), x_T], axis=1)
            q_cols = np.stack([np.zeros_like(q_T), q_T], axis=1)
            parts.append((u_cols, x_cols, q_cols, None))
        else:
            parts.append(_simulate_numpy(policy, curve, params, config, times, level0, z, record))
    u, x, q = (np.concatenate([p[i] for p in parts]) for i in range(3))
    rates = np.concatenate([p[3] for p in parts]) if record == "full" and not use_kernel else None
    steps = np.arange(n + 1) if u.shape[1] == n + 1 else np.array([0, n])
    return TrajectoryBatch(u, x, q, steps, params, config, rates)


def _level_to_u(level, params):
    return np.where(level >= params.n_levels, 1.0, level * params.delta)


def _simulate_numpy(policy, curve, params, config, times, level, z, record):
    n, m = config.n_steps, params.n_levels
    tau = times.tau
    full = record == "full"
    k = level.size
    level = level.astype(float)
    x = np.zeros(k)
    q = np.zeros(k)
    if full:
        u_out = np.empty((k, n + 1))
        x_out = np.zeros((k, n + 1))
        q_out = np.zeros((k, n + 1))
        r_out = np.empty((k, n))
    u_start = _level_to_u(level, params)
    state = policy.initial_state(k, times)
    for i in range(n):
        u = _level_to_u(level, params)
        if full:
            u_out[:, i] = u
        r, state = policy.rate(u, i, state)
        r = np.clip(np.asarray(r, dtype=float), params.r_min, params.r_max)
        if not np.all(np.isfinite(r)):
            raise ConfigurationError("policy returned non-finite rates")
        x = x + r * u * tau
        q = q + params.phi * (r - params.r_bar) ** 2 * tau
        lp, lm = intensities(curve, r)
        cp, cm = jump_counts(lp, lm, u, tau, config.jump_trials, config.mode, config.epsilon, z[:, i])
        level = np.clip(level + cp - cm, 0.0, float(m))
        if full:
            x_out[:, i + 1] = x
            q_out[:, i + 1] = q
            r_out[:, i] = r
    u_end = _level_to_u(level, params)
    if full:
        u_out[:, n] = u_end
        return u_out, x_out, q_out, r_out
    return (np.stack([u_start, u_end], axis=1), np.stack([np.zeros(k), x], axis=1),
            np.stack([np.zeros(k), q], axis=1), None)


def objective(batch: TrajectoryBatch, params: RiskParams | None = None, T: float | None = None) -> float:
    """Mean of ``(X_N - psi(U_N) - Q_N) / T`` over paths, in rate units."""
    params = batch.params if params is None else params
    T = params.horizon_T if T is None else T
    return float(np.mean((batch.x_T - terminal_penalty(batch.u_T, params) - batch.q_T) / T))


def second_differences(values: np.ndarray, grid: UtilizationGrid, u_star: float) -> tuple[np.ndarray, np.ndarray]:
    """Second differences in ``u`` at nodes ``{u_star, ..., 1 - delta}``; returns (node index, values)."""
    m = grid.n_levels
    k0 = max(1, int(np.ceil(u_star / grid.delta - 1e-9)))
    idx = np.arange(k0, m)
    return idx, values[idx + 1] - 2.0 * values[idx] + values[idx - 1]


def convexity_penalty(policy, grid: UtilizationGrid, times: TimeGrid, u_star: float,
                      r_min: float | None = None, r_max: float | None = None) -> float:
    """Non-negative convexity violation above ``u_star``, averaged over the ``N`` time slices.

    ``policy`` may be a :class:`RateSurface`, an array of node values, or any
    stateless policy evaluated at the lattice nodes.
    """
    if isinstance(policy, RateSurface):
        values = policy.values[:, : times.n_steps]
    elif isinstance(policy, np.ndarray):
        values = policy[:, : times.n_steps]
    else:
        cols = []
        for i in range(times.n_steps):
            r, _ = policy.rate(grid.nodes, i, policy.initial_state(len(grid), times))
            cols.append(r)
        values = np.stack(cols, axis=1)
    if r_min is not None or r_max is not None:
        values = np.clip(values, r_min, r_max)
    _, d2 = second_differences(values, grid, u_star)
    return float(-np.minimum(d2, 0.0).sum() / times.n_steps)


def max_probability(curve, params: RiskParams, tau: float, J: int) -> float:
    """Largest per-trial jump probability over the admissible rates."""
    curve = as_piecewise(curve, params.r_min, params.r_max)
    return float(max(curve.lambda_plus.max(), curve.lambda_minus.max()) * tau / J)


def write_trajectories(path, batch: TrajectoryBatch, header: dict | None = None) -> None:
    """Dump ``path,step,u,x,q`` rows, path-major."""
    n, k = batch.u.shape
    with Path(path).open("w", encoding="utf-8") as fh:
        for key, value in (header or {}).items():
            fh.write(f"# {key}={value}\n")
        fh.write("path,step,u,x,q\n")
        for p in range(n):
            for j in range(k):
                fh.write(f"{p},{batch.steps[j]},{batch.u[p, j]:.12g},{batch.x[p, j]:.12g},{batch.q[p, j]:.12g}\n")
