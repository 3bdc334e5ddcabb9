"""Domain types shared by every stage: risk parameters, lattices, surfaces.

Utilization lives on the lattice ``{0, delta, ..., 1}`` and time on a regular
partition of ``[0, T]`` measured in blocks.  Rates are plain decimals that
are multiplied by block counts directly (``r * U * tau``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

#: tolerance for every floating comparison against lattice membership
GRID_TOL = 1e-9

#: one basis point
BPS = 1e-4


class LendrateError(Exception):
    """Base class of all package errors."""


class ConfigurationError(LendrateError, ValueError):
    """Invalid parameters or incompatible settings."""


class DomainError(LendrateError, ValueError):
    """Argument outside the domain of a function."""


class ShapeError(LendrateError, ValueError):
    """Surfaces or arrays defined on mismatching grids."""


class CalibrationError(LendrateError):
    """Calibration input cannot produce an estimate."""


class ConvergenceError(CalibrationError):
    """Root bracketing or iteration failed to converge."""


class DivergenceError(LendrateError, ArithmeticError):
    """Numerical integration produced non-finite values."""


class TrainingError(LendrateError):
    """Training produced a non-finite objective."""


def lattice_size(delta: float) -> int:
    """Return ``M = 1/delta``, raising if ``1/delta`` is not an integer."""
    if not 0.0 < delta < 1.0:
        raise ConfigurationError(f"delta must lie in (0, 1), got {delta!r}")
    inv = 1.0 / delta
    m = int(round(inv))
    if abs(inv - m) > GRID_TOL * max(1.0, inv):
        raise ConfigurationError(f"1/delta must be an integer, got 1/{delta!r} = {inv!r}")
    return m


@dataclass(frozen=True)
class RiskParams:
    """Constants of the control problem.

    ``phi`` weights the running penalty ``phi * (r - r_bar)**2``, ``eta`` the
    terminal liquidity penalty above ``u_star``.  ``horizon_T`` is in blocks.
    """

    phi: float = 7.0
    eta: float = 1500.0
    r_bar: float = 0.0
    u_star: float = 0.9
    horizon_T: float = 100.0
    delta: float = 0.01
    r_min: float = 0.0
    r_max: float = 0.25

    def __post_init__(self):
        if not self.phi > 0:
            raise ConfigurationError(f"phi must be > 0, got {self.phi!r}")
        if not self.eta >= 0:
            raise ConfigurationError(f"eta must be >= 0, got {self.eta!r}")
        if not self.r_bar >= 0:
            raise ConfigurationError(f"r_bar must be >= 0, got {self.r_bar!r}")
        if not 0.0 <= self.u_star <= 1.0:
            raise ConfigurationError(f"u_star must lie in [0, 1], got {self.u_star!r}")
        if not self.horizon_T > 0:
            raise ConfigurationError(f"horizon_T must be > 0, got {self.horizon_T!r}")
        if not 0.0 <= self.r_min < self.r_max:
            raise ConfigurationError(
                f"rate bounds must satisfy 0 <= r_min < r_max, got {self.r_min!r}, {self.r_max!r}"
            )
        lattice_size(self.delta)

    @property
    def n_levels(self) -> int:
        """Number of jumps of size delta between 0 and 1."""
        return lattice_size(self.delta)


@dataclass(frozen=True)
class UtilizationGrid:
    delta: float
    nodes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        m = lattice_size(self.delta)
        nodes = np.arange(m + 1, dtype=float) * self.delta
        nodes[-1] = 1.0
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def n_levels(self) -> int:
        return self.nodes.size - 1

    def __len__(self):
        return self.nodes.size

    def index_of(self, u) -> np.ndarray:
        """Lattice index of each ``u``; raises if some ``u`` is off the lattice."""
        u = np.asarray(u, dtype=float)
        x = u / self.delta
        k = np.rint(x)
        if np.any(np.abs(x - k) > GRID_TOL / self.delta) or np.any(k < 0) or np.any(k > self.n_levels):
            raise DomainError("utilization value is not a lattice node")
        return k.astype(np.int64)


@dataclass(frozen=True)
class TimeGrid:
    n_steps: int
    horizon_T: float
    times: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.n_steps) != self.n_steps or self.n_steps <= 0:
            raise ConfigurationError(f"n_steps must be a positive integer, got {self.n_steps!r}")
        if not self.horizon_T > 0:
            raise ConfigurationError(f"horizon_T must be > 0, got {self.horizon_T!r}")
        times = np.arange(self.n_steps + 1, dtype=float) * self.tau
        times[-1] = self.horizon_T
        times.setflags(write=False)
        object.__setattr__(self, "times", times)

    @property
    def tau(self) -> float:
        return self.horizon_T / self.n_steps


def build_grids(params: RiskParams, n_steps: int) -> tuple[UtilizationGrid, TimeGrid]:
    return UtilizationGrid(params.delta), TimeGrid(n_steps, params.horizon_T)


def _check_surface(grid: UtilizationGrid, times: TimeGrid, values: np.ndarray) -> np.ndarray:
    values = np.array(values, dtype=float)
    if values.ndim != 2 or values.shape[0] != len(grid):
        raise ShapeError(f"surface needs {len(grid)} utilization rows, got shape {values.shape}")
    if values.shape[1] not in (times.n_steps, times.n_steps + 1):
        raise ShapeError(
            f"surface needs {times.n_steps} or {times.n_steps + 1} time columns, got {values.shape[1]}"
        )
    if not np.all(np.isfinite(values)):
        raise DomainError("surface values must be finite")
    values.setflags(write=False)
    return values


@dataclass(frozen=True)
class RateSurface:
    """Rates ``r(u_k, t_i)``; columns cover ``t_0..t_{N-1}`` or ``t_0..t_N``."""

    grid: UtilizationGrid
    times: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _check_surface(self.grid, self.times, self.values))

    @property
    def t(self) -> np.ndarray:
        return self.times.times[: self.values.shape[1]]

    def clipped(self, r_min: float, r_max: float) -> "RateSurface":
        return RateSurface(self.grid, self.times, np.clip(self.values, r_min, r_max))


@dataclass(frozen=True)
class ValueSurface:
    """Value-function correction ``h(u_k, t_i)`` over ``t_0..t_N``."""

    grid: UtilizationGrid
    times: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        values = _check_surface(self.grid, self.times, self.values)
        if values.shape[1] != self.times.n_steps + 1:
            raise ShapeError("value surface must include the terminal time")
        object.__setattr__(self, "values", values)

    @property
    def t(self) -> np.ndarray:
        return self.times.times


def terminal_penalty(u, params: RiskParams):
    """Liquidity penalty ``eta * max(u - u_star, 0)**2``."""
    arr = np.asarray(u, dtype=float)
    if np.any(arr < -GRID_TOL) or np.any(arr > 1.0 + GRID_TOL):
        raise DomainError("utilization must lie in [0, 1]")
    excess = np.maximum(arr - params.u_star, 0.0)
    out = params.eta * excess * excess
    return float(out) if out.ndim == 0 else out


def terminal_penalty_slope(u, params: RiskParams):
    """Derivative of :func:`terminal_penalty` in ``u``."""
    arr = np.asarray(u, dtype=float)
    return 2.0 * params.eta * np.maximum(arr - params.u_star, 0.0)
