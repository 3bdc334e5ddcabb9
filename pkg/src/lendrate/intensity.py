"""Arrival intensities of utilization jumps as functions of the rate.

``lambda_plus(r)`` drives utilization up and is non-increasing in ``r``;
``lambda_minus(r)`` drives it down and is non-decreasing.  Two forms are
supported: linear coefficients and piecewise-linear knots (the calibrated
form).  Both share :func:`intensities` and :func:`equilibrium_rate`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import CalibrationError, ConfigurationError, DomainError

_EVAL_TOL = 1e-12


@dataclass(frozen=True)
class LinearIntensity:
    a0_plus: float
    a1_plus: float
    a0_minus: float
    a1_minus: float

    def __post_init__(self):
        if self.a0_plus < 0 or self.a1_plus > 0 or self.a0_minus < 0 or self.a1_minus < 0:
            raise ConfigurationError(
                "linear intensities need a0_plus >= 0, a1_plus <= 0, a0_minus >= 0, a1_minus >= 0"
            )

    @classmethod
    def zero(cls) -> "LinearIntensity":
        return cls(0.0, 0.0, 0.0, 0.0)

    def coefficients(self) -> tuple[float, float, float, float]:
        return (self.a0_plus, self.a1_plus, self.a0_minus, self.a1_minus)


@dataclass(frozen=True)
class PiecewiseIntensity:
    rates: np.ndarray
    lambda_plus: np.ndarray
    lambda_minus: np.ndarray

    def __post_init__(self):
        rates = np.array(self.rates, dtype=float)
        lp = np.array(self.lambda_plus, dtype=float)
        lm = np.array(self.lambda_minus, dtype=float)
        if rates.ndim != 1 or rates.size < 2 or lp.shape != rates.shape or lm.shape != rates.shape:
            raise ConfigurationError("piecewise intensity needs >= 2 knots with matching lengths")
        if not np.all(np.isfinite(rates)) or not np.all(np.isfinite(lp)) or not np.all(np.isfinite(lm)):
            raise ConfigurationError("knot values must be finite")
        if np.any(np.diff(rates) <= 0):
            raise ConfigurationError("knot rates must be strictly increasing")
        if np.any(lp < 0) or np.any(lm < 0):
            raise ConfigurationError("intensities must be non-negative")
        if np.any(np.diff(lp) > 0) or np.any(np.diff(lm) < 0):
            raise ConfigurationError("lambda_plus must be non-increasing and lambda_minus non-decreasing")
        for name, arr in (("rates", rates), ("lambda_plus", lp), ("lambda_minus", lm)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def r_min(self) -> float:
        return float(self.rates[0])

    @property
    def r_max(self) -> float:
        return float(self.rates[-1])

    def __eq__(self, other):
        if not isinstance(other, PiecewiseIntensity):
            return NotImplemented
        return (
            np.array_equal(self.rates, other.rates)
            and np.array_equal(self.lambda_plus, other.lambda_plus)
            and np.array_equal(self.lambda_minus, other.lambda_minus)
        )

    __hash__ = None


def eval_linear(curve: LinearIntensity, r):
    """Evaluate ``a0 + a1 * r`` for both directions, floored at zero."""
    r = np.asarray(r, dtype=float)
    lp = np.maximum(curve.a0_plus + curve.a1_plus * r, 0.0)
    lm = np.maximum(curve.a0_minus + curve.a1_minus * r, 0.0)
    if lp.ndim == 0:
        return float(lp), float(lm)
    return lp, lm


def eval_piecewise(curve: PiecewiseIntensity, r):
    r = np.asarray(r, dtype=float)
    if np.any(r < curve.r_min - _EVAL_TOL) or np.any(r > curve.r_max + _EVAL_TOL):
        raise DomainError(f"rate outside [{curve.r_min}, {curve.r_max}]")
    lp = np.interp(r, curve.rates, curve.lambda_plus)
    lm = np.interp(r, curve.rates, curve.lambda_minus)
    if lp.ndim == 0:
        return float(lp), float(lm)
    return lp, lm


def intensities(curve, r):
    """Dispatch to :func:`eval_linear` or :func:`eval_piecewise`."""
    if isinstance(curve, LinearIntensity):
        return eval_linear(curve, r)
    return eval_piecewise(curve, r)


def as_piecewise(curve, r_min: float, r_max: float) -> PiecewiseIntensity:
    """Exact piecewise-linear representation of ``curve`` on ``[r_min, r_max]``.

    Linear curves get extra knots where a floored component crosses zero, so
    the result agrees with :func:`eval_linear` everywhere on the interval.
    Piecewise curves must cover the interval and are restricted to it.
    """
    if isinstance(curve, PiecewiseIntensity):
        if curve.r_min > r_min + _EVAL_TOL or curve.r_max < r_max - _EVAL_TOL:
            raise DomainError(
                f"intensity knots span [{curve.r_min}, {curve.r_max}], need [{r_min}, {r_max}]"
            )
        if abs(curve.r_min - r_min) <= _EVAL_TOL and abs(curve.r_max - r_max) <= _EVAL_TOL:
            return curve
        inner = curve.rates[(curve.rates > r_min) & (curve.rates < r_max)]
        pts = np.concatenate(([r_min], inner, [r_max]))
    else:
        pts = [r_min, r_max]
        for a0, a1 in ((curve.a0_plus, curve.a1_plus), (curve.a0_minus, curve.a1_minus)):
            if a1 != 0.0:
                root = -a0 / a1
                if r_min < root < r_max:
                    pts.append(root)
        pts = np.unique(np.asarray(pts, dtype=float))
    lp, lm = intensities(curve, pts)
    return PiecewiseIntensity(pts, lp, lm)


def post_process(raw_points, r_min: float, r_max: float) -> PiecewiseIntensity:
    """Turn per-bin estimates into a valid piecewise curve on ``[r_min, r_max]``.

    The outer segments are extended linearly to the rate bounds, every value
    is floored at zero, and monotonicity is restored with a running minimum
    (``lambda_plus``) and running maximum (``lambda_minus``) over the knots.
    """
    pts = np.asarray(raw_points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 2:
        raise CalibrationError("post-processing needs at least two (rate, lambda_plus, lambda_minus) points")
    rates = pts[:, 0]
    if np.any(np.diff(rates) <= 0):
        raise CalibrationError("raw point rates must be strictly increasing")
    if rates[0] < r_min - _EVAL_TOL or rates[-1] > r_max + _EVAL_TOL:
        raise CalibrationError(f"raw point rates must lie inside [{r_min}, {r_max}]")

    def extend(i, j, at):
        slope = (pts[j, 1:] - pts[i, 1:]) / (rates[j] - rates[i])
        return np.concatenate(([at], pts[i, 1:] + slope * (at - rates[i])))

    rows = [pts]
    if rates[0] > r_min + _EVAL_TOL:
        rows.insert(0, extend(0, 1, r_min)[None, :])
    else:
        pts[0, 0] = r_min
    if rates[-1] < r_max - _EVAL_TOL:
        rows.append(extend(-2, -1, r_max)[None, :])
    else:
        pts[-1, 0] = r_max
    knots = np.vstack(rows)
    lp = np.minimum.accumulate(np.maximum(knots[:, 1], 0.0))
    lm = np.maximum.accumulate(np.maximum(knots[:, 2], 0.0))
    return PiecewiseIntensity(knots[:, 0], lp, lm)


def equilibrium_rate(curve, r_min: float | None = None, r_max: float | None = None) -> float | None:
    """Smallest rate where ``lambda_plus == lambda_minus``, or ``None``.

    Linear curves without bounds use the closed form on ``r >= 0``; with
    bounds (and for piecewise curves) each segment is solved in turn.
    """
    if isinstance(curve, LinearIntensity):
        if r_min is not None and r_max is not None:
            return equilibrium_rate(as_piecewise(curve, r_min, r_max))
        lo = 0.0 if r_min is None else r_min
        d0 = curve.a0_plus - curve.a0_minus
        d1 = curve.a1_plus - curve.a1_minus
        if d1 == 0.0:
            return float(lo) if d0 == 0.0 else None
        root = -d0 / d1
        if root < lo or (r_max is not None and root > r_max):
            return None
        return float(root)

    if r_min is not None or r_max is not None:
        curve = as_piecewise(curve, curve.r_min if r_min is None else r_min,
                             curve.r_max if r_max is None else r_max)
    d = curve.lambda_plus - curve.lambda_minus
    if d[0] == 0.0:
        return float(curve.rates[0])
    for k in range(d.size - 1):
        if d[k + 1] == 0.0:
            return float(curve.rates[k + 1])
        if d[k] * d[k + 1] < 0:
            w = d[k] / (d[k] - d[k + 1])
            return float(curve.rates[k] + w * (curve.rates[k + 1] - curve.rates[k]))
    return None


def write_intensity_csv(path, curve: PiecewiseIntensity, header: dict | None = None) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        for key, value in (header or {}).items():
            fh.write(f"# {key}={value}\n")
        writer = csv.writer(fh)
        writer.writerow(["rate", "lambda_plus", "lambda_minus"])
        for r, lp, lm in zip(curve.rates, curve.lambda_plus, curve.lambda_minus):
            writer.writerow([repr(float(r)), repr(float(lp)), repr(float(lm))])


def read_intensity_csv(path) -> PiecewiseIntensity:
    rows = []
    with Path(path).open(encoding="utf-8") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigurationError(f"{path}: empty intensity file") from None
        if [h.strip() for h in header] != ["rate", "lambda_plus", "lambda_minus"]:
            raise ConfigurationError(f"{path}: expected header rate,lambda_plus,lambda_minus")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ConfigurationError(f"{path}: bad row {lineno}: {row}") from None
    if not rows:
        raise ConfigurationError(f"{path}: no knots")
    arr = np.asarray(rows)
    return PiecewiseIntensity(arr[:, 0], arr[:, 1], arr[:, 2])
