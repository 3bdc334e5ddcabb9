"""Exact optimal rates under linear intensities.

With ``lambda(r) = a0 + a1 r`` the value function is ``x + h(t, u)`` and
``h`` solves a Riccati-type ODE system on the utilization lattice:

    dh/dt = -[ r_bar U + A h + (U + B h)**2 / (4 phi) ],   h(T) = -psi(U)

``A`` and ``B`` are tridiagonal generators; their boundary rows encode a
vanishing third difference of ``h`` at ``u = 0`` and ``u = 1``.  The system
is integrated backward with fixed-step RK4.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sps

from .core import (
    ConfigurationError,
    DivergenceError,
    RateSurface,
    RiskParams,
    ShapeError,
    TimeGrid,
    UtilizationGrid,
    ValueSurface,
    terminal_penalty,
)
from .intensity import LinearIntensity, eval_linear

ODE_MAX_STEP = 0.1


@dataclass(frozen=True)
class RiccatiSystem:
    A: sps.csr_matrix
    B: sps.csr_matrix
    source: np.ndarray          # r_bar * U
    curvature: float            # 1 / (4 phi)
    terminal: np.ndarray        # -psi(U)
    grid: UtilizationGrid

    def rhs(self, h: np.ndarray) -> np.ndarray:
        """Time derivative of ``h``."""
        g = self.grid.nodes + self.B @ h
        return -(self.source + self.A @ h + self.curvature * g * g)


def _stencil(up: float, down: float, m: int) -> sps.csr_matrix:
    """Generator of up/down jumps with third-difference boundary rows."""
    n = m + 1
    rows, cols, vals = [], [], []

    def put(i, j, v):
        rows.append(i)
        cols.append(j)
        vals.append(v)

    put(0, 0, 2 * down - up)
    put(0, 1, up - 3 * down)
    put(0, 2, down)
    i = np.arange(1, m)
    rows.extend(np.repeat(i, 3))
    cols.extend(np.stack([i - 1, i, i + 1], axis=1).ravel())
    vals.extend(np.tile([down, -down - up, up], m - 1))
    put(m, m - 2, up)
    put(m, m - 1, down - 3 * up)
    put(m, m, 2 * up - down)
    return sps.csr_matrix((np.asarray(vals, dtype=float), (np.asarray(rows), np.asarray(cols))), shape=(n, n))


def build_system(curve: LinearIntensity, params: RiskParams) -> RiccatiSystem:
    if not isinstance(curve, LinearIntensity):
        raise ConfigurationError("the Riccati system needs linear intensities")
    grid = UtilizationGrid(params.delta)
    m = grid.n_levels
    if m < 2:
        raise ConfigurationError("the boundary stencils need at least three lattice nodes")
    lp_bar, lm_bar = eval_linear(curve, params.r_bar)
    A = _stencil(lp_bar, lm_bar, m)
    B = _stencil(curve.a1_plus, curve.a1_minus, m)
    return RiccatiSystem(
        A=A,
        B=B,
        source=params.r_bar * grid.nodes,
        curvature=1.0 / (4.0 * params.phi),
        terminal=-terminal_penalty(grid.nodes, params),
        grid=grid,
    )


def solve_riccati(system: RiccatiSystem, times: TimeGrid, max_step: float = ODE_MAX_STEP) -> ValueSurface:
    """Integrate backward from ``T`` and record ``h`` at every grid time."""
    n_sub = max(1, int(np.ceil(times.tau / max_step - 1e-12)))
    dt = times.tau / n_sub
    out = np.empty((len(system.grid), times.n_steps + 1))
    h = system.terminal.astype(float).copy()
    out[:, -1] = h
    for i in range(times.n_steps, 0, -1):
        t = times.times[i]
        for s in range(n_sub):
            # backward in time: dh/ds = -rhs with s = T - t
            k1 = system.rhs(h)
            k2 = system.rhs(h - 0.5 * dt * k1)
            k3 = system.rhs(h - 0.5 * dt * k2)
            k4 = system.rhs(h - dt * k3)
            h = h - dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.all(np.isfinite(h)):
                raise DivergenceError(f"Riccati solution is not finite at t = {t - (s + 1) * dt:.6g}")
        out[:, i - 1] = h
    out[:, -1] = system.terminal
    return ValueSurface(system.grid, times, out)


def _rates_from_h(h: np.ndarray, u: np.ndarray, curve: LinearIntensity, params: RiskParams) -> np.ndarray:
    """Optimal rate on interior nodes, boundaries by linear extrapolation."""
    a1p, a1m = curve.a1_plus, curve.a1_minus
    r = np.empty_like(h)
    r[1:-1] = params.r_bar + (
        u[1:-1, None] + a1p * h[2:] + a1m * h[:-2] - (a1p + a1m) * h[1:-1]
    ) / (2.0 * params.phi)
    r[0] = 2.0 * r[1] - r[2]
    r[-1] = 2.0 * r[-2] - r[-3]
    return r


def optimal_rate_surface(h: ValueSurface, curve: LinearIntensity, params: RiskParams,
                         clip: bool = True) -> RateSurface:
    r = _rates_from_h(h.values, h.grid.nodes, curve, params)
    if clip:
        r = np.clip(r, params.r_min, params.r_max)
    return RateSurface(h.grid, h.times, r)


def solve_optimal_rates(curve: LinearIntensity, params: RiskParams, n_steps: int,
                        clip: bool = True) -> tuple[RateSurface, ValueSurface]:
    """Build, integrate and extract in one call."""
    system = build_system(curve, params)
    h = solve_riccati(system, TimeGrid(n_steps, params.horizon_T))
    return optimal_rate_surface(h, curve, params, clip=clip), h


def taylor_terminal_rate(u, curve: LinearIntensity, params: RiskParams):
    """First-order expansion in ``delta`` of the rate at maturity."""
    u = np.asarray(u, dtype=float)
    excess = np.maximum(u - params.u_star, 0.0)
    out = params.r_bar + (u + 2.0 * params.eta * params.delta * (curve.a1_minus - curve.a1_plus) * excess) / (
        2.0 * params.phi
    )
    return float(out) if out.ndim == 0 else out


def terminal_rate(curve: LinearIntensity, params: RiskParams) -> np.ndarray:
    """Unclipped optimal rate at ``t = T``, where ``h = -psi`` exactly."""
    u = UtilizationGrid(params.delta).nodes
    h = -terminal_penalty(u, params)[:, None]
    return _rates_from_h(h, u, curve, params)[:, 0]


@dataclass(frozen=True)
class Sensitivity:
    name: str
    bump: float
    values: np.ndarray          # d r*(u, T) / d parameter per node

    @property
    def all_nonpositive(self) -> bool:
        return bool(np.all(self.values <= 0))

    @property
    def all_nonnegative(self) -> bool:
        return bool(np.all(self.values >= 0))


def sensitivity_report(params: RiskParams, curve: LinearIntensity, bumps: dict | None = None,
                       rel_bump: float = 0.01) -> dict[str, Sensitivity]:
    """Central differences of the terminal rate slice in ``r_bar``, ``phi``, ``eta``.

    Bumps default to 1% of each parameter, or ``1e-4`` absolute for a zero
    parameter.  The unclipped slice is used so that rate bounds do not mask
    the sign of a response.
    """
    out = {}
    for name in ("r_bar", "phi", "eta"):
        base = getattr(params, name)
        step = (bumps or {}).get(name, rel_bump * abs(base) if base != 0 else 1e-4)
        lo_val = base - step
        if name == "r_bar" and lo_val < 0:
            # one-sided at the r_bar >= 0 boundary; the slice is linear in r_bar
            up = terminal_rate(curve, replace(params, r_bar=base + step))
            mid = terminal_rate(curve, params)
            out[name] = Sensitivity(name, step, (up - mid) / step)
            continue
        up = terminal_rate(curve, replace(params, **{name: base + step}))
        dn = terminal_rate(curve, replace(params, **{name: lo_val}))
        out[name] = Sensitivity(name, step, (up - dn) / (2.0 * step))
    return out


# ----------------------------------------------------------------------------
# surface files
# ----------------------------------------------------------------------------

def write_surface_csv(path, surface, header: dict | None = None) -> None:
    """Write ``u,t,value`` rows, u-major, 12 significant digits."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        meta = {"delta": surface.grid.delta, "n_steps": surface.times.n_steps,
                "horizon_T": surface.times.horizon_T, **(header or {})}
        for key, value in meta.items():
            fh.write(f"# {key}={value}\n")
        fh.write("u,t,value\n")
        t = surface.t
        for k, u in enumerate(surface.grid.nodes):
            for i, ti in enumerate(t):
                fh.write(f"{u:.12g},{ti:.12g},{surface.values[k, i]:.12g}\n")


def read_surface_csv(path) -> RateSurface:
    """Read a rate surface; the lattice and time grid are inferred from the rows."""
    path = Path(path)
    meta = {}
    rows = []
    with path.open(encoding="utf-8") as fh:
        lines = []
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key.strip()] = value.strip()
            else:
                lines.append(line)
    reader = csv.reader(lines)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ConfigurationError(f"{path}: empty surface file") from None
    if header != ["u", "t", "value"]:
        raise ConfigurationError(f"{path}: expected header u,t,value")
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            rows.append([float(v) for v in row])
        except ValueError:
            raise ConfigurationError(f"{path}: bad row {lineno}: {row}") from None
    if not rows:
        raise ConfigurationError(f"{path}: no rows")
    arr = np.asarray(rows)
    us = np.unique(arr[:, 0])
    ts = np.unique(arr[:, 1])
    if us.size * ts.size != arr.shape[0] or us.size < 2:
        raise ShapeError(f"{path}: rows do not form a full (u, t) grid")
    delta = float(meta["delta"]) if "delta" in meta else float(us[1] - us[0])
    grid = UtilizationGrid(delta)
    if len(grid) != us.size:
        raise ShapeError(f"{path}: {us.size} utilization values do not match delta={delta}")
    if "n_steps" in meta and "horizon_T" in meta:
        times = TimeGrid(int(meta["n_steps"]), float(meta["horizon_T"]))
    else:
        # without metadata the columns are taken to run from t_0 to t_N
        times = TimeGrid(max(ts.size - 1, 1), float(ts[-1]) if ts.size > 1 else 1.0)
    values = arr[:, 2].reshape(us.size, ts.size)
    return RateSurface(grid, times, values)
