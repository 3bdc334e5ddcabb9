"""Two-phase training of rate policies on the relaxed simulator.

Phase one runs a fixed number of iterations at a larger learning rate; phase
two lowers the rate, enlarges the batch and stops once the validation loss
settles.  Every iteration draws a fresh sample and takes ``epochs`` Adam
steps on it (common random numbers within the iteration).
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..core import ConfigurationError, RiskParams, TrainingError
from ..sim import SimConfig, initial_levels, path_uniforms
from ..sim.engine import kernel_curve
from ..sim.streams import JUMPS
from .adam import Adam
from .gradient import Sample, draw_sample, evaluate
from .models import PARAM_NAMES, GridPolicy, ParametricModel

log = logging.getLogger(__name__)

# stream tags, combined with phase and iteration indices
_TRAIN = 10
_VALID = 11

DEFAULT_INIT = {
    "linear": (0.0, 0.05),
    "bilinear": (0.0, 0.05, 0.05),
    "adaptive": (0.05, 0.001, 0.1, 1.5),
}


@dataclass(frozen=True)
class TrainConfig:
    n_steps: int = 100
    jump_trials: int = 10
    epsilon: float = 0.25
    seed: int = 0
    u0: object = "uniform"
    epochs: int = 10
    phase1_lr: float = 1e-3
    phase1_batch: int = 2500
    phase1_iters: int = 1000
    phase2_lr: float = 1e-4
    phase2_batch: int = 25_000
    phase2_max_iters: int = 1000
    val_batch: int = 250_000
    val_every: int = 10
    val_min_iter: int = 100
    stop_tol: float = 1e-7
    init: tuple | None = None       # parametric starting values

    def __post_init__(self):
        for name in ("epochs", "phase1_batch", "phase2_batch", "val_batch", "val_every"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.phase1_iters < 0 or self.phase2_max_iters < 0:
            raise ConfigurationError("iteration counts must be >= 0")

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Reduced batches and phase-two cap for single-machine runs."""
        base = dict(phase1_batch=2500, phase2_batch=10_000, phase2_max_iters=300, val_batch=100_000)
        base.update(overrides)
        return cls(**base)

    def sim_config(self, batch: int) -> SimConfig:
        return SimConfig(n_steps=self.n_steps, jump_trials=self.jump_trials, epsilon=self.epsilon,
                         mode="relaxed", seed=self.seed, batch_size=batch)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["init"] = list(self.init) if self.init is not None else None
        return d


@dataclass
class TrainReport:
    rows: list = field(default_factory=list)     # dicts: phase, iteration, value, objective, penalty, validation
    stop_reason: str = ""
    wall_clock: float = 0.0
    final_parameters: object = None
    final_validation: float = float("nan")

    def validations(self, phase: int = 2) -> list[tuple[int, float, float]]:
        return [(r["iteration"], r["validation"], r["validation_se"]) for r in self.rows
                if r["phase"] == phase and not np.isnan(r["validation"])]

    def write_csv(self, path, header: dict | None = None) -> None:
        cols = ["phase", "iteration", "value", "objective", "penalty", "validation", "validation_se"]
        with Path(path).open("w", encoding="utf-8") as fh:
            for key, value in (header or {}).items():
                fh.write(f"# {key}={value}\n")
            fh.write(f"# stop_reason={self.stop_reason}\n")
            fh.write(",".join(cols) + "\n")
            for r in self.rows:
                fh.write(",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c]) for c in cols) + "\n")


def _params_vector(model):
    return model.theta.ravel().copy() if isinstance(model, GridPolicy) else np.array(model.values)


def _rebuild(model, vec):
    if isinstance(model, GridPolicy):
        return model.with_theta(vec).projected()
    return model.with_values(vec).projected()


def _run_phase(model, curve, params, cfg: TrainConfig, phase: int, lr: float, batch: int, max_iters: int,
               report: TrainReport, validate: bool, knots):
    sim_cfg = cfg.sim_config(batch)
    val_cfg = cfg.sim_config(cfg.val_batch)
    opt = Adam(lr)
    prev_val = None
    vec = _params_vector(model)
    for it in range(max_iters):
        sample = draw_sample(params, sim_cfg, cfg.u0, batch, (_TRAIN, phase, it))
        for _ in range(cfg.epochs):
            ev = evaluate(model, curve, params, sim_cfg, sample, curve_knots=knots)
            if not np.isfinite(ev.value) or not np.all(np.isfinite(ev.gradient)):
                report.stop_reason = f"non-finite objective in phase {phase} iteration {it}"
                raise TrainingError(report.stop_reason)
            vec = opt.step(vec, np.ravel(ev.gradient))
            model = _rebuild(model, vec)
            vec = _params_vector(model)
        row = dict(phase=phase, iteration=it, value=ev.value, objective=ev.objective, penalty=ev.penalty,
                   validation=float("nan"), validation_se=float("nan"))
        if validate and (it + 1) % cfg.val_every == 0:
            val, se = validation_value(model, curve, params, val_cfg, cfg, knots)
            row["validation"], row["validation_se"] = val, se
            report.final_validation = val
            log.info("phase %d iteration %d validation %.6g", phase, it, val)
            if it + 1 >= cfg.val_min_iter and prev_val is not None and abs(val - prev_val) < cfg.stop_tol:
                report.rows.append(row)
                report.stop_reason = f"validation change below {cfg.stop_tol:g} at iteration {it + 1}"
                return model
            prev_val = val
        report.rows.append(row)
    report.stop_reason = f"phase {phase} reached {max_iters} iterations"
    return model


_VAL_CHUNK = 10_000


def validation_value(model, curve, params, val_cfg: SimConfig, cfg: TrainConfig, knots=None):
    """Loss on the fixed validation sample, evaluated in chunks; returns (value, std error)."""
    n = val_cfg.batch_size
    vals, sq, pen = 0.0, 0.0, 0.0
    for start in range(0, n, _VAL_CHUNK):
        k = min(_VAL_CHUNK, n - start)
        sample = _validation_chunk(params, val_cfg, cfg.u0, start, k)
        ev = evaluate(model, curve, params, val_cfg, sample, want_grad=False, curve_knots=knots)
        vals += ev.objective * k
        sq += (ev.std_error**2 * k + ev.objective**2) * k
        pen = ev.penalty
    mean = vals / n
    var = max(sq / n - mean * mean, 0.0)
    return mean - pen, float(np.sqrt(var / n))


def _validation_chunk(params, sim_cfg, u0, start, k) -> Sample:
    paths = np.arange(start, start + k)
    level0 = initial_levels(u0, params, sim_cfg.seed, paths, (_VALID,))
    z = path_uniforms(sim_cfg.seed, (_VALID, JUMPS), paths, (sim_cfg.n_steps, 2, sim_cfg.jump_trials))
    return Sample(level0, np.log(z) - np.log1p(-z))


def train_policy(curve, params: RiskParams, config: TrainConfig, init: GridPolicy | None = None):
    """Train a :class:`GridPolicy` with both phases and the convexity penalty."""
    t0 = time.perf_counter()
    model = init if init is not None else GridPolicy.linear_init(params, config.n_steps)
    report = TrainReport()
    knots = kernel_curve(curve, params)
    try:
        model = _run_phase(model, curve, params, config, 1, config.phase1_lr, config.phase1_batch,
                           config.phase1_iters, report, False, knots)
        model = _run_phase(model, curve, params, config, 2, config.phase2_lr, config.phase2_batch,
                           config.phase2_max_iters, report, True, knots)
    finally:
        report.wall_clock = time.perf_counter() - t0
    report.final_parameters = model.theta
    return model, report


def train_parametric(variant: str, curve, params: RiskParams, config: TrainConfig,
                     init: ParametricModel | None = None):
    """Phase-two-only training of a parametric model, no convexity penalty, parameters kept >= 0."""
    if variant not in PARAM_NAMES:
        raise ConfigurationError(f"unknown model variant {variant!r}")
    t0 = time.perf_counter()
    if init is None:
        start = config.init if config.init is not None else DEFAULT_INIT[variant]
        init = ParametricModel(variant, start, params.u_star, params.r_min, params.r_max)
    model = init.projected()
    report = TrainReport()
    knots = kernel_curve(curve, params)
    try:
        model = _run_phase(model, curve, params, config, 2, config.phase2_lr, config.phase2_batch,
                           config.phase2_max_iters, report, True, knots)
    finally:
        report.wall_clock = time.perf_counter() - t0
    report.final_parameters = model.as_dict()
    return model, report


# ----------------------------------------------------------------------------
# model files
# ----------------------------------------------------------------------------

def save_model(path, model, params: RiskParams, config: TrainConfig, report: TrainReport | None = None,
               surface_file: str | None = None) -> None:
    """JSON model document; grid policies point at a surface CSV written separately.

    No timestamps are stored, so reruns with the same seed are byte-identical.
    """
    doc = {
        "variant": "policy" if isinstance(model, GridPolicy) else model.variant,
        "risk_params": asdict(params),
        "train_config": config.to_dict() if config is not None else None,
        "seed": config.seed if config is not None else None,
        "final_validation_objective": None if report is None else _json_float(report.final_validation),
        "stop_reason": None if report is None else report.stop_reason,
    }
    if isinstance(model, GridPolicy):
        if surface_file is None:
            raise ConfigurationError("grid policies are saved with a surface file")
        doc["surface_file"] = surface_file
    else:
        doc["parameters"] = model.as_dict()
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _json_float(x):
    return None if x is None or not np.isfinite(x) else float(x)


def load_model(path):
    """Return ``(model, risk_params)`` from a model file."""
    from ..hjb import read_surface_csv

    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"{path}: cannot read model file: {exc}") from None
    try:
        params = RiskParams(**doc["risk_params"])
        variant = doc["variant"]
        if variant == "policy":
            surface = read_surface_csv(path.parent / doc["surface_file"])
            return GridPolicy.from_surface(surface, params.r_min, params.r_max), params
        return ParametricModel.from_dict(variant, doc["parameters"], params.u_star, params.r_min,
                                         params.r_max), params
    except (KeyError, TypeError) as exc:
        raise ConfigurationError(f"{path}: malformed model file ({exc})") from None


def with_seed(config: TrainConfig, seed: int) -> TrainConfig:
    return replace(config, seed=seed)
