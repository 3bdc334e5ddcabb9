"""Calibration of jump intensities from block-by-block pool history.

Per-block utilization changes are cut into signed counts of ``delta``-sized
jumps.  Within a rate bin those counts are modelled as Skellam draws (the
difference of two Poisson counts), whose intensities are estimated by
maximum likelihood.  Bin estimates become the knots of a piecewise curve.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import bisect
from scipy.special import gammaln, logsumexp

from .core import GRID_TOL, CalibrationError, ConfigurationError, ConvergenceError, DomainError
from .intensity import PiecewiseIntensity, post_process

log = logging.getLogger(__name__)

_SERIES_RTOL = 1e-16
_MLE_XTOL = 1e-10
_MLE_BRACKET_MAX = 1e6
_Z95 = 1.96


# ----------------------------------------------------------------------------
# data containers
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class PoolHistory:
    """Recorded pool states, one row per block with activity.

    Build with :meth:`from_utilization` or :meth:`from_amounts`; the latter
    keeps supplied/borrowed amounts and derives utilization from them.
    """

    block_number: np.ndarray
    utilization: np.ndarray
    rate: np.ndarray
    supplied: np.ndarray | None = None
    borrowed: np.ndarray | None = None

    def __post_init__(self):
        blocks = np.asarray(self.block_number)
        if blocks.ndim != 1:
            raise ConfigurationError("block numbers must be one-dimensional")
        if not np.issubdtype(blocks.dtype, np.integer):
            if not np.all(np.isfinite(blocks)) or np.any(blocks != np.round(blocks)):
                raise ConfigurationError("block numbers must be integers")
        blocks = blocks.astype(np.int64)
        u = np.asarray(self.utilization, dtype=float)
        r = np.asarray(self.rate, dtype=float)
        if u.shape != blocks.shape or r.shape != blocks.shape:
            raise ConfigurationError("history columns must have equal length")
        if np.any(np.diff(blocks) <= 0):
            raise ConfigurationError("block numbers must be strictly increasing")
        if not np.all(np.isfinite(u)) or not np.all(np.isfinite(r)):
            raise ConfigurationError("utilization and rate must be finite")
        if np.any(u < -GRID_TOL) or np.any(u > 1 + GRID_TOL):
            raise ConfigurationError("utilization must lie in [0, 1]")
        for name, arr in (("block_number", blocks), ("utilization", u), ("rate", r)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_utilization(cls, block_number, utilization, rate) -> "PoolHistory":
        return cls(block_number, utilization, rate)

    @classmethod
    def from_amounts(cls, block_number, supplied, borrowed, rate) -> "PoolHistory":
        s = np.asarray(supplied, dtype=float)
        b = np.asarray(borrowed, dtype=float)
        if np.any(s <= 0):
            raise ConfigurationError("supplied amounts must be > 0")
        if np.any(b < 0):
            raise ConfigurationError("borrowed amounts must be >= 0")
        if np.any(b > s * (1 + GRID_TOL)):
            raise ConfigurationError("borrowed must not exceed supplied")
        return cls(block_number, np.minimum(b / s, 1.0), rate, s, b)

    def __len__(self):
        return self.block_number.size


@dataclass(frozen=True)
class IncrementDataset:
    """Signed jump counts ``n`` paired with the rate in force at the block."""

    n: np.ndarray
    rate: np.ndarray
    n_gaps: int = 0

    def __post_init__(self):
        n = np.asarray(self.n, dtype=np.int64)
        r = np.asarray(self.rate, dtype=float)
        if n.shape != r.shape or n.ndim != 1:
            raise ConfigurationError("increments and rates must be 1-d of equal length")
        n.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "rate", r)

    def __len__(self):
        return self.n.size


@dataclass(frozen=True)
class BinnedSample:
    edges: np.ndarray
    index: np.ndarray            # bin of each increment
    counts: np.ndarray
    mean_rate: np.ndarray        # NaN for an empty bin
    data: IncrementDataset
    degenerate: bool = False

    @property
    def n_bins(self) -> int:
        return self.counts.size

    def sample(self, k: int) -> np.ndarray:
        return self.data.n[self.index == k]


@dataclass(frozen=True)
class SkellamFit:
    lambda_plus: float
    lambda_minus: float
    ci_plus: float
    ci_minus: float
    n: int
    loglik: float = field(default=float("nan"), compare=False)


# ----------------------------------------------------------------------------
# history -> increments -> bins
# ----------------------------------------------------------------------------

def increments_from_history(history: PoolHistory, delta: float) -> IncrementDataset:
    """Signed jump counts between consecutive recorded rows.

    Positive changes are floored and negative ones ceiled (truncation toward
    zero), after a ``1e-9`` nudge so that exact multiples of ``delta`` that
    suffered rounding are not lost.
    """
    if not delta > 0:
        raise ConfigurationError(f"delta must be > 0, got {delta!r}")
    if len(history) < 2:
        raise CalibrationError("history needs at least two rows")
    du = np.diff(history.utilization) / delta
    n = np.where(du >= 0, np.floor(du + GRID_TOL), np.ceil(du - GRID_TOL)).astype(np.int64)
    gaps = int(np.count_nonzero(np.diff(history.block_number) > 1))
    if gaps:
        log.info("history has %d multi-block gaps, each treated as one transition", gaps)
    return IncrementDataset(n, history.rate[:-1], gaps)


def bin_by_rate(data: IncrementDataset, K: int) -> BinnedSample:
    """Assign increments to ``K`` uniform rate bins, the last closed on the right."""
    if int(K) != K or K < 1:
        raise ConfigurationError(f"bin count must be a positive integer, got {K!r}")
    if len(data) == 0:
        raise CalibrationError("no increments to bin")
    lo, hi = float(data.rate.min()), float(data.rate.max())
    if hi == lo:
        edges = np.array([lo, hi])
        index = np.zeros(len(data), dtype=np.int64)
        return BinnedSample(edges, index, np.array([len(data)]), np.array([lo]), data, degenerate=True)
    edges = np.linspace(lo, hi, K + 1)
    index = np.clip(np.searchsorted(edges, data.rate, side="right") - 1, 0, K - 1)
    counts = np.bincount(index, minlength=K)
    sums = np.bincount(index, weights=data.rate, minlength=K)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_rate = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return BinnedSample(edges, index, counts, mean_rate, data)


# ----------------------------------------------------------------------------
# Bessel and Skellam
# ----------------------------------------------------------------------------

def _log_bessel_orders(orders: np.ndarray, z: float) -> np.ndarray:
    """``log I_x(z)`` for an array of integer orders and one ``z > 0``."""
    half = np.log(0.5 * z)
    x = orders.astype(float)[:, None]
    n_terms = int(0.5 * z) + 32
    while True:
        k = np.arange(n_terms, dtype=float)[None, :]
        terms = (2.0 * k + x) * half - gammaln(k + 1.0) - gammaln(k + x + 1.0)
        total = logsumexp(terms, axis=1)
        if np.all(terms[:, -1] - total < np.log(_SERIES_RTOL)):
            return total
        n_terms *= 2


def log_bessel_i(x, z):
    """Log of the modified Bessel function of the first kind, integer order.

    Evaluated from its power series in log space.  ``I_x(0)`` is 1 for
    ``x = 0`` and 0 otherwise, returned as ``-inf``.
    """
    x_arr, z_arr = np.broadcast_arrays(np.asarray(x), np.asarray(z, dtype=float))
    if np.any(z_arr < 0) or not np.all(np.isfinite(z_arr)):
        raise DomainError("Bessel argument must be finite and >= 0")
    if np.any(x_arr < 0) or np.any(x_arr != np.round(x_arr)):
        raise DomainError("Bessel order must be a non-negative integer")
    x_int = x_arr.astype(np.int64)
    out = np.empty(x_arr.shape, dtype=float)
    zero = z_arr == 0
    out[zero] = np.where(x_int[zero] == 0, 0.0, -np.inf)
    for zv in np.unique(z_arr[~zero]):
        sel = z_arr == zv
        out[sel] = _log_bessel_orders(x_int[sel], float(zv))
    return float(out) if out.ndim == 0 else out


def _poisson_logpmf(k, lam):
    k = np.asarray(k)
    with np.errstate(divide="ignore"):
        if lam == 0:
            return np.where(k == 0, 0.0, -np.inf)
        out = k * np.log(lam) - lam - gammaln(np.maximum(k, 0) + 1.0)
    return np.where(k < 0, -np.inf, out)


def skellam_log_pmf(x, lambda_plus: float, lambda_minus: float):
    """Log probability that ``Poisson(lambda_plus) - Poisson(lambda_minus) == x``."""
    if lambda_plus < 0 or lambda_minus < 0:
        raise DomainError("Skellam intensities must be >= 0")
    x = np.asarray(x)
    if np.any(x != np.round(x)):
        raise DomainError("Skellam support is the integers")
    x = x.astype(np.int64)
    if lambda_minus == 0:
        out = _poisson_logpmf(x, lambda_plus)
    elif lambda_plus == 0:
        out = _poisson_logpmf(-x, lambda_minus)
    else:
        z = 2.0 * np.sqrt(lambda_plus * lambda_minus)
        out = (-lambda_plus - lambda_minus + 0.5 * x * (np.log(lambda_plus) - np.log(lambda_minus))
               + log_bessel_i(np.abs(x), z))
    out = np.asarray(out, dtype=float)
    return float(out) if out.ndim == 0 else out


def skellam_sample(lambda_plus: float, lambda_minus: float, size, rng: np.random.Generator) -> np.ndarray:
    return rng.poisson(lambda_plus, size) - rng.poisson(lambda_minus, size)


def _grouped(sample) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(sample)
    if x.size == 0:
        raise CalibrationError("empty sample")
    if np.any(x != np.round(x)):
        raise CalibrationError("Skellam samples must be integers")
    values, counts = np.unique(x.astype(np.int64), return_counts=True)
    return values, counts.astype(float)


def _bessel_ratios(values: np.ndarray, z: float) -> tuple[np.ndarray, np.ndarray]:
    """``I_{x+1}/I_x`` and ``I_{x+2}/I_x`` at ``z`` for integer ``x`` (any sign)."""
    lx = log_bessel_i(np.abs(values), z)
    l1 = log_bessel_i(np.abs(values + 1), z)
    l2 = log_bessel_i(np.abs(values + 2), z)
    return np.exp(l1 - lx), np.exp(l2 - lx)


def skellam_loglik(sample, lambda_plus: float, lambda_minus: float) -> float:
    values, counts = _grouped(sample)
    return float(np.sum(counts * skellam_log_pmf(values, lambda_plus, lambda_minus)))


def skellam_score(sample, lambda_plus: float, lambda_minus: float) -> np.ndarray:
    """Gradient of the log-likelihood at an interior point ``(l+, l-)``."""
    if not (lambda_plus > 0 and lambda_minus > 0):
        raise DomainError("score needs both intensities > 0")
    values, counts = _grouped(sample)
    n, sx = counts.sum(), float(np.sum(counts * values))
    ratio, _ = _bessel_ratios(values, 2.0 * np.sqrt(lambda_plus * lambda_minus))
    s = float(np.sum(counts * ratio))
    return np.array([
        -n + sx / lambda_plus + np.sqrt(lambda_minus / lambda_plus) * s,
        -n + np.sqrt(lambda_plus / lambda_minus) * s,
    ])


def _hessian_grouped(values, counts, lp, lm) -> np.ndarray:
    z = 2.0 * np.sqrt(lp * lm)
    sx = float(np.sum(counts * values))
    ratio, ratio2 = _bessel_ratios(values, z)
    s1 = float(np.sum(counts * ratio))
    sd = float(np.sum(counts * (ratio / z + ratio2 - ratio * ratio)))
    hpp = -sx / lp**2 - 0.5 * np.sqrt(lm / lp) / lp * s1 + lm / lp * sd
    hmm = -0.5 * np.sqrt(lp / lm) / lm * s1 + lp / lm * sd
    hpm = s1 / z + sd
    return np.array([[hpp, hpm], [hpm, hmm]])


def skellam_hessian(sample, lambda_plus: float, lambda_minus: float) -> np.ndarray:
    """Second derivatives of the log-likelihood at an interior point."""
    if not (lambda_plus > 0 and lambda_minus > 0):
        raise DomainError("Hessian needs both intensities > 0")
    values, counts = _grouped(sample)
    return _hessian_grouped(values, counts, lambda_plus, lambda_minus)


def skellam_mle(sample) -> SkellamFit:
    """Maximum-likelihood Skellam intensities with 95% half-widths.

    The mean constraint ``l+ = l- + mean`` reduces the problem to one score
    equation in ``l-``, solved by bisection.  Half-widths come from the
    observed information.  When the optimum sits on the boundary (one
    intensity zero) the surviving intensity gets the Poisson half-width and
    the boundary one gets NaN.
    """
    values, counts = _grouped(sample)
    n = int(counts.sum())
    mean = float(np.sum(counts * values)) / n
    if np.all(values == 0):
        return SkellamFit(0.0, 0.0, float("nan"), float("nan"), n, 0.0)

    def score(lm):
        lp = lm + mean
        ratio, _ = _bessel_ratios(values, 2.0 * np.sqrt(lp * lm))
        return -n + np.sqrt(lp / lm) * float(np.sum(counts * ratio))

    lo = max(0.0, -mean)
    lo_eval = lo * (1.0 + 1e-12) + 1e-14
    if score(lo_eval) <= 0:
        # boundary optimum: one Poisson component only
        lp, lm = (mean, 0.0) if mean > 0 else (0.0, -mean)
    else:
        hi = max(1.0, 2.0 * lo)
        while score(hi) > 0:
            hi *= 2.0
            if hi > _MLE_BRACKET_MAX:
                raise ConvergenceError("no sign change of the Skellam score below 1e6")
        lm = bisect(score, lo_eval, hi, xtol=_MLE_XTOL, maxiter=500)
        lp = lm + mean
    loglik = float(np.sum(counts * skellam_log_pmf(values, lp, lm)))

    if lp > 0 and lm > 0:
        info = -_hessian_grouped(values, counts, lp, lm)
        det = info[0, 0] * info[1, 1] - info[0, 1] ** 2
        if det > 0:
            ci_p = _Z95 * np.sqrt(info[1, 1] / det)
            ci_m = _Z95 * np.sqrt(info[0, 0] / det)
        else:
            ci_p = ci_m = float("nan")
    else:
        ci_p = _Z95 * np.sqrt(lp / n) if lp > 0 else float("nan")
        ci_m = _Z95 * np.sqrt(lm / n) if lm > 0 else float("nan")
    return SkellamFit(float(lp), float(lm), float(ci_p), float(ci_m), n, loglik)


# ----------------------------------------------------------------------------
# pipeline
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class BinFit:
    lo: float
    hi: float
    mean_rate: float
    fit: SkellamFit | None      # None for an empty bin


def fit_bins(binned: BinnedSample) -> list[BinFit]:
    out = []
    for k in range(binned.n_bins):
        lo, hi = float(binned.edges[k]), float(binned.edges[k + 1])
        if binned.counts[k] == 0:
            out.append(BinFit(lo, hi, float("nan"), None))
        else:
            out.append(BinFit(lo, hi, float(binned.mean_rate[k]), skellam_mle(binned.sample(k))))
    return out


def calibrate_intensities(history: PoolHistory, delta: float, K: int, r_min: float, r_max: float,
                          return_fits: bool = False):
    """History to piecewise intensity curve on ``[r_min, r_max]``.

    Empty bins are skipped.  A single non-empty bin yields a flat two-knot
    curve and a warning.
    """
    data = increments_from_history(history, delta)
    binned = bin_by_rate(data, K)
    fits = fit_bins(binned)
    used = [b for b in fits if b.fit is not None]
    for b in used:
        if b.mean_rate < r_min - GRID_TOL or b.mean_rate > r_max + GRID_TOL:
            raise CalibrationError(f"bin mean rate {b.mean_rate} outside [{r_min}, {r_max}]")
    if len(used) == 1:
        warnings.warn("only one non-empty rate bin; calibrated intensities are flat", stacklevel=2)
        f = used[0].fit
        curve = PiecewiseIntensity([r_min, r_max], [f.lambda_plus] * 2, [f.lambda_minus] * 2)
    else:
        raw = [(b.mean_rate, b.fit.lambda_plus, b.fit.lambda_minus) for b in used]
        curve = post_process(raw, r_min, r_max)
    return (curve, fits, data) if return_fits else curve


# ----------------------------------------------------------------------------
# files
# ----------------------------------------------------------------------------

_AMOUNT_COLS = ["block_number", "supplied", "borrowed", "rate"]
_UTIL_COLS = ["block_number", "utilization", "rate"]
FIT_COLUMNS = ["bin_lo", "bin_hi", "mean_rate", "lambda_plus", "ci_plus", "lambda_minus", "ci_minus", "n"]


def read_history_csv(path) -> PoolHistory:
    """Load a pool-history CSV.  Schema problems raise ConfigurationError with the row."""
    path = Path(path)
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ConfigurationError(f"{path}: empty history file") from None
        if header not in (_AMOUNT_COLS, _UTIL_COLS):
            raise ConfigurationError(f"{path}: unexpected header {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ConfigurationError(f"{path}: row {lineno} has {len(row)} fields")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ConfigurationError(f"{path}: row {lineno} is not numeric: {row}") from None
    if not rows:
        raise ConfigurationError(f"{path}: no data rows")
    arr = np.asarray(rows)
    try:
        if header == _AMOUNT_COLS:
            return PoolHistory.from_amounts(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])
        return PoolHistory.from_utilization(arr[:, 0], arr[:, 1], arr[:, 2])
    except ConfigurationError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None


def write_history_csv(path, history: PoolHistory, header: dict | None = None) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        for key, value in (header or {}).items():
            fh.write(f"# {key}={value}\n")
        writer = csv.writer(fh)
        if history.supplied is not None:
            writer.writerow(_AMOUNT_COLS)
            for row in zip(history.block_number, history.supplied, history.borrowed, history.rate):
                writer.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])
        else:
            writer.writerow(_UTIL_COLS)
            for b, u, r in zip(history.block_number, history.utilization, history.rate):
                writer.writerow([int(b), repr(float(u)), repr(float(r))])


def write_fit_report(path, fits: list[BinFit], header: dict | None = None) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        for key, value in (header or {}).items():
            fh.write(f"# {key}={value}\n")
        writer = csv.writer(fh)
        writer.writerow(FIT_COLUMNS)
        for b in fits:
            f = b.fit
            if f is None:
                writer.writerow([repr(b.lo), repr(b.hi), "nan", "nan", "nan", "nan", "nan", 0])
            else:
                writer.writerow([repr(b.lo), repr(b.hi), repr(b.mean_rate), repr(f.lambda_plus),
                                 repr(f.ci_plus), repr(f.lambda_minus), repr(f.ci_minus), f.n])


def read_fit_report(path) -> list[dict]:
    """Rows of a fit report as dicts of floats, with ``n`` as int."""
    with Path(path).open(encoding="utf-8") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        if reader.fieldnames != FIT_COLUMNS:
            raise ConfigurationError(f"{path}: expected columns {FIT_COLUMNS}")
        return [{k: int(v) if k == "n" else float(v) for k, v in row.items()} for row in reader]


def synthetic_history(curve, policy, params, n_blocks: int, u0: float, seed: int,
                      jump_trials: int = 10) -> PoolHistory:
    """One simulated path of ``n_blocks`` blocks recorded as a pool history.

    Each block is one exact-mode simulation step of length 1, so the
    recovered intensities are per block.
    """
    from dataclasses import replace

    from .sim import SimConfig, simulate_batch

    p = replace(params, horizon_T=float(n_blocks))
    cfg = SimConfig(n_steps=n_blocks, jump_trials=jump_trials, mode="exact", seed=seed)
    batch = simulate_batch(policy, curve, p, cfg, u0, n_paths=1, record="full")
    u = batch.u[0]
    r = np.empty_like(u)
    r[:-1] = batch.rates[0]
    r[-1] = r[-2]
    return PoolHistory.from_utilization(np.arange(n_blocks + 1), u, r)
