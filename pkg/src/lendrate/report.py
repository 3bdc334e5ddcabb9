"""PnL statistics, densities and surface error metrics."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import BPS, RateSurface, ShapeError, terminal_penalty

STATS_COLUMNS = ("model", "u0", "mean_bps", "std_bps", "p5_bps", "p95_bps", "n_paths")


def risk_adjusted_pnl(batch, params=None, T: float | None = None) -> np.ndarray:
    """Per-path ``(X - psi(U) - Q) / T`` in basis points."""
    params = batch.params if params is None else params
    T = params.horizon_T if T is None else T
    return (batch.x_T - terminal_penalty(batch.u_T, params) - batch.q_T) / T / BPS


def raw_pnl(batch, T: float | None = None) -> np.ndarray:
    """Per-path ``X / T`` in basis points, penalties left out."""
    T = batch.params.horizon_T if T is None else T
    return batch.x_T / T / BPS


@dataclass(frozen=True)
class PnLStats:
    model: str
    u0: str
    mean: float
    std: float
    p5: float
    p95: float
    n_paths: int

    def row(self) -> list:
        return [self.model, self.u0, self.mean, self.std, self.p5, self.p95, self.n_paths]


def stats(values, model: str = "", u0="") -> PnLStats:
    """Mean, population std and linearly interpolated 5%/95% percentiles."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("no values")
    if v.min() == v.max():
        # identical paths: report the value itself, without summation round-off
        c = float(v[0])
        return PnLStats(model, str(u0), c, 0.0, c, c, int(v.size))
    p5, p95 = np.percentile(v, [5.0, 95.0], method="linear")
    return PnLStats(model, str(u0), float(v.mean()), float(v.std()), float(p5), float(p95), int(v.size))


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    normalized: bool = False

    @property
    def density(self) -> np.ndarray:
        total = self.counts.sum()
        return self.counts / (total * np.diff(self.edges)) if total else np.zeros(self.counts.shape)


def histogram(values, bins: int = 200, lo_q: float = 0.1, hi_q: float = 99.9) -> Histogram:
    """Uniform bins over the central ``[lo_q, hi_q]`` percentile range.

    Values outside the range go into the end bins, so the counts always add
    up to the number of values.
    """
    v = np.asarray(values, dtype=float).ravel()
    lo, hi = np.percentile(v, [lo_q, hi_q])
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    counts, _ = np.histogram(np.clip(v, lo, hi), bins=edges)
    return Histogram(edges, counts)


def surface_errors(candidate: RateSurface, reference: RateSurface) -> tuple[float, float]:
    """Mean and max absolute difference in bps over interior nodes and ``t_0 .. t_{N-1}``.

    The mean is the lattice integral ``delta/((N-1)(1-delta)) * sum |diff|``.
    """
    if (
        len(candidate.grid) != len(reference.grid)
        or abs(candidate.grid.delta - reference.grid.delta) > 1e-12
        or candidate.times.n_steps != reference.times.n_steps
    ):
        raise ShapeError("surfaces live on different grids")
    n = candidate.times.n_steps
    a = candidate.values[1:-1, :n]
    b = reference.values[1:-1, :n]
    diff = np.abs(a - b)
    delta = candidate.grid.delta
    mean = delta / (max(n - 1, 1) * (1.0 - delta)) * diff.sum()
    return float(mean / BPS), float(diff.max() / BPS)


def _head(fh, header):
    for key, value in (header or {}).items():
        fh.write(f"# {key}={value}\n")


def write_stats_csv(path, rows: list[PnLStats], header: dict | None = None) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        _head(fh, header)
        fh.write(",".join(STATS_COLUMNS) + "\n")
        for s in rows:
            fh.write(f"{s.model},{s.u0},{s.mean:.6f},{s.std:.6f},{s.p5:.6f},{s.p95:.6f},{s.n_paths}\n")


def write_histogram_csv(path, hist: Histogram, header: dict | None = None) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        _head(fh, header)
        fh.write("bin_lo,bin_hi,count\n")
        for lo, hi, c in zip(hist.edges[:-1], hist.edges[1:], hist.counts):
            fh.write(f"{lo:.8g},{hi:.8g},{int(c)}\n")
