"""Jump counts per step: exact Bernoulli trials and their smooth relaxation."""

from __future__ import annotations

import numpy as np

from ..core import GRID_TOL, ConfigurationError, DomainError

P_CLAMP = 1e-12


def hard_sigmoid(x, epsilon: float):
    """Zero below ``-epsilon``, one above ``epsilon``, linear in between."""
    if not epsilon > 0:
        raise ConfigurationError(f"epsilon must be > 0, got {epsilon!r}")
    out = np.clip((np.asarray(x, dtype=float) + epsilon) / (2.0 * epsilon), 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def logit(x):
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0) or np.any(x >= 1):
        raise DomainError("logit needs arguments in (0, 1)")
    out = np.log(x) - np.log1p(-x)
    return float(out) if out.ndim == 0 else out


def jump_probabilities(lambda_plus, lambda_minus, u_prev, tau: float, J: int):
    """Per-trial probabilities with the boundary indicators applied."""
    u_prev = np.asarray(u_prev, dtype=float)
    lp = np.where(u_prev >= 1.0 - GRID_TOL, 0.0, lambda_plus)
    lm = np.where(u_prev <= GRID_TOL, 0.0, lambda_minus)
    pp = lp * (tau / J)
    pm = lm * (tau / J)
    if np.any(pp > 1.0) or np.any(pm > 1.0):
        raise ConfigurationError(
            "jump probability lambda * tau / J exceeds 1; raise the trial count J or the step count N"
        )
    return pp, pm


def _counts(p, z, mode, epsilon):
    # p has the path shape, z carries one extra trailing trial axis
    if mode == "exact":
        return np.sum(z >= 1.0 - p[..., None], axis=-1).astype(float)
    pc = np.clip(p, P_CLAMP, 1.0 - P_CLAMP)
    lp = np.log(pc) - np.log1p(-pc)
    c = np.sum(np.clip((lp[..., None] + logit(z) + epsilon) / (2.0 * epsilon), 0.0, 1.0), axis=-1)
    return np.where(p > 0, c, 0.0)


def jump_counts(lambda_plus, lambda_minus, u_prev, tau: float, J: int, mode: str, epsilon: float, uniforms):
    """Up and down jump counts for one step.

    ``uniforms`` has shape ``(..., 2, J)``: index 0 drives up-jumps and 1
    down-jumps.  Exact mode counts trials with ``Z >= 1 - p``; relaxed mode
    sums ``H_eps(L(p) + L(Z))``, which tends to the exact count as
    ``epsilon -> 0``.
    """
    if mode not in ("exact", "relaxed"):
        raise ConfigurationError(f"mode must be 'exact' or 'relaxed', got {mode!r}")
    if mode == "relaxed" and not epsilon > 0:
        raise ConfigurationError("relaxed mode needs epsilon > 0")
    z = np.asarray(uniforms, dtype=float)
    if z.shape[-2:] != (2, J):
        raise ConfigurationError(f"uniforms need trailing shape (2, {J}), got {z.shape}")
    pp, pm = jump_probabilities(lambda_plus, lambda_minus, u_prev, tau, J)
    pp = np.broadcast_to(pp, z.shape[:-2])
    pm = np.broadcast_to(pm, z.shape[:-2])
    return _counts(pp, z[..., 0, :], mode, epsilon), _counts(pm, z[..., 1, :], mode, epsilon)
