"""Command-line entry point.

Every command reads its settings from built-in defaults, then an optional
JSON ``--config`` file, then explicit flags (flags win).  Every file written
starts with ``# key=value`` lines recording the resolved settings.

Exit codes: 0 ok, 1 threshold exceeded, 2 bad input, 3 calibration failure,
4 numeric divergence, 5 training failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path


from . import __version__
from .core import (
    CalibrationError,
    ConfigurationError,
    DivergenceError,
    DomainError,
    LendrateError,
    RiskParams,
    ShapeError,
    TrainingError,
)

log = logging.getLogger("lendrate")

EXIT_OK, EXIT_THRESHOLD, EXIT_INPUT, EXIT_CALIBRATION, EXIT_DIVERGENCE, EXIT_TRAINING = range(6)
THREADS_ENV = "LENDRATE_THREADS"

# defaults shared by every command; market-scale lattice
DEFAULTS = {
    "phi": 7.0,
    "eta": 1500.0,
    "r_bar": 0.0,
    "u_star": 0.9,
    "horizon_T": 100.0,
    "delta": 0.001,
    "r_min": 0.0,
    "r_max": 0.25,
    "n_steps": 100,
    "jump_trials": 10,
    "epsilon": 0.25,
    "seed": 0,
}
_RISK_KEYS = tuple(f.name for f in fields(RiskParams))


class _Threshold(Exception):
    pass


# ----------------------------------------------------------------------------
# settings
# ----------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser, risk: bool = True, sim: bool = True) -> None:
    p.add_argument("--config", type=Path, help="JSON file of settings; flags override it")
    p.add_argument("--threads", type=int, help=f"worker threads (default ${THREADS_ENV} or all cores)")
    p.add_argument("--seed", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    if risk:
        g = p.add_argument_group("risk parameters")
        g.add_argument("--phi", type=float)
        g.add_argument("--eta", type=float)
        g.add_argument("--r-bar", dest="r_bar", type=float)
        g.add_argument("--u-star", dest="u_star", type=float)
        g.add_argument("--horizon", dest="horizon_T", type=float)
        g.add_argument("--delta", type=float)
        g.add_argument("--r-min", dest="r_min", type=float)
        g.add_argument("--r-max", dest="r_max", type=float)
    if sim:
        g = p.add_argument_group("simulation")
        g.add_argument("--n-steps", dest="n_steps", type=int)
        g.add_argument("--jump-trials", dest="jump_trials", type=int)
        g.add_argument("--epsilon", type=float)


def _settings(args, extra: dict | None = None) -> dict:
    """Defaults, then the config file, then flags that were given."""
    out = dict(DEFAULTS)
    out.update(extra or {})
    if args.config is not None:
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"{args.config}: cannot read config: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigurationError(f"{args.config}: config must be a JSON object")
        out.update({k.replace("-", "_"): v for k, v in doc.items()})
    for key, value in vars(args).items():
        if value is not None and key not in ("config", "func", "verbose", "command"):
            out[key] = value
    return out


def _risk(s: dict) -> RiskParams:
    return RiskParams(**{k: float(s[k]) for k in _RISK_KEYS})


def _header(command: str, s: dict) -> dict:
    head = {"lendrate_version": __version__, "command": command}
    for k in sorted(s):
        v = s[k]
        if isinstance(v, Path):
            v = str(v)
        elif isinstance(v, (list, tuple)):
            v = " ".join(str(x) for x in v)
        head[k] = v
    return head


def _threads(n: int | None) -> None:
    import numba

    if n is None:
        env = os.environ.get(THREADS_ENV)
        if env is None:
            return
        try:
            n = int(env)
        except ValueError:
            raise ConfigurationError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    if n < 1:
        raise ConfigurationError("--threads must be >= 1")
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _curve(s: dict):
    """Intensity curve from ``intensity`` (CSV), or ``coefficients`` (a0+, a1+, a0-, a1-)."""
    from .intensity import LinearIntensity, read_intensity_csv

    if s.get("coefficients") is not None:
        c = [float(x) for x in s["coefficients"]]
        if len(c) != 4:
            raise ConfigurationError("--coefficients takes a0_plus a1_plus a0_minus a1_minus")
        return LinearIntensity(*c)
    if s.get("intensity") is None:
        raise ConfigurationError("give --intensity FILE or --coefficients")
    return read_intensity_csv(s["intensity"])


def _out_dir(s: dict) -> Path:
    out = Path(s.get("out_dir") or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _u0(value):
    if isinstance(value, str) and value != "uniform":
        try:
            return float(value)
        except ValueError:
            raise ConfigurationError(f"u0 must be a number or 'uniform', got {value!r}") from None
    return value


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------

def cmd_calibrate(args) -> int:
    from .calibrate import calibrate_intensities, read_history_csv, write_fit_report
    from .intensity import equilibrium_rate, write_intensity_csv

    s = _settings(args, {"bins": 4})
    params = _risk(s)
    history = read_history_csv(s["history"])
    curve, fits, data = calibrate_intensities(history, params.delta, int(s["bins"]), params.r_min, params.r_max,
                                              return_fits=True)
    out = _out_dir(s)
    head = _header("calibrate", s)
    write_intensity_csv(out / "intensity.csv", curve, head)
    write_fit_report(out / "fit_report.csv", fits, head)
    eq = equilibrium_rate(curve)
    log.info("%d increments, %d bins; equilibrium rate %s", len(data), len(fits),
             "none" if eq is None else f"{eq:.6g}")
    return EXIT_OK


def cmd_solve(args) -> int:
    from .hjb import solve_optimal_rates, write_surface_csv

    s = _settings(args)
    params = _risk(s)
    curve = _curve(s)
    from .intensity import LinearIntensity

    if not isinstance(curve, LinearIntensity):
        raise ConfigurationError("solve needs linear intensities (--coefficients)")
    rates, values = solve_optimal_rates(curve, params, int(s["n_steps"]))
    out = _out_dir(s)
    head = _header("solve", s)
    write_surface_csv(out / "rate_surface.csv", rates, head)
    write_surface_csv(out / "value_surface.csv", values, head)
    return EXIT_OK


_TRAIN_KEYS = ("epochs", "phase1_lr", "phase1_batch", "phase1_iters", "phase2_lr", "phase2_batch",
               "phase2_max_iters", "val_batch", "val_every", "val_min_iter", "stop_tol")


def _train_config(s: dict):
    from .optimize import TrainConfig

    base = TrainConfig.desk() if s.get("scale", "desk") == "desk" else TrainConfig()
    kw = {k: type(getattr(base, k))(s[k]) for k in _TRAIN_KEYS if s.get(k) is not None}
    kw.update(n_steps=int(s["n_steps"]), jump_trials=int(s["jump_trials"]), epsilon=float(s["epsilon"]),
              seed=int(s["seed"]), u0=_u0(s.get("u0", "uniform")))
    if s.get("init") is not None:
        kw["init"] = tuple(float(x) for x in s["init"])
    return TrainConfig(**{**asdict(base), **kw})


def cmd_train(args) -> int:
    from .hjb import write_surface_csv
    from .optimize import save_model, train_parametric, train_policy

    s = _settings(args, {"variant": "policy", "scale": "desk"})
    params = _risk(s)
    curve = _curve(s)
    cfg = _train_config(s)
    variant = s["variant"]
    if variant == "policy":
        model, report = train_policy(curve, params, cfg)
    else:
        model, report = train_parametric(variant, curve, params, cfg)
    out = _out_dir(s)
    head = _header("train", s)
    name = s.get("name") or variant
    surface_file = None
    if variant == "policy":
        surface_file = f"{name}_surface.csv"
        write_surface_csv(out / surface_file, model.surface(params), head)
    save_model(out / f"{name}.json", model, params, cfg, report, surface_file=surface_file)
    report.write_csv(out / f"{name}_train_report.csv", head)
    log.info("%s: %s; final validation %.6g", variant, report.stop_reason, report.final_validation)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from dataclasses import replace

    from .optimize import load_model
    from .report import histogram, raw_pnl, risk_adjusted_pnl, stats, write_histogram_csv, write_stats_csv
    from .sim import SimConfig, simulate_batch

    s = _settings(args, {"mode": "exact", "paths": 100_000, "u0": ["0.9", "0.95", "1"]})
    if s["mode"] != "exact":
        raise ConfigurationError(f"evaluation runs the exact simulator, got mode {s['mode']!r}")
    base = _risk(s)
    curve = _curve(s)
    cfg = SimConfig(n_steps=int(s["n_steps"]), jump_trials=int(s["jump_trials"]), epsilon=float(s["epsilon"]),
                    mode="exact", seed=int(s["seed"]))
    out = _out_dir(s)
    head = _header("evaluate", s)
    adjusted, raw = [], []
    u0_list = s["u0"] if isinstance(s["u0"], list) else [s["u0"]]
    for path in s["model"]:
        model, mparams = load_model(path)
        # the model's own target utilization and bounds, the run's risk weights
        params = replace(base, u_star=mparams.u_star, delta=mparams.delta, r_min=mparams.r_min,
                         r_max=mparams.r_max)
        label = Path(path).stem
        for spec in u0_list:
            u0 = _u0(spec)
            batch = simulate_batch(model, curve, params, cfg, u0, n_paths=int(s["paths"]))
            ra = risk_adjusted_pnl(batch)
            adjusted.append(stats(ra, label, spec))
            raw.append(stats(raw_pnl(batch), label, spec))
            write_histogram_csv(out / f"hist_{label}_u0_{spec}.csv", histogram(ra), head)
            log.info("%s u0=%s: %.2f (%.2f) bps", label, spec, adjusted[-1].mean, adjusted[-1].std)
    write_stats_csv(out / "stats.csv", adjusted, head)
    write_stats_csv(out / "raw_stats.csv", raw, head)
    return EXIT_OK


def cmd_validate(args) -> int:
    from .hjb import read_surface_csv
    from .report import surface_errors

    s = _settings(args)
    mean, worst = surface_errors(read_surface_csv(s["candidate"]), read_surface_csv(s["reference"]))
    print(f"mean_error_bps={mean:.6f}")
    print(f"max_error_bps={worst:.6f}")
    if s.get("mean_threshold") is not None and mean > float(s["mean_threshold"]):
        raise _Threshold(f"mean error {mean:.4f} bps above {s['mean_threshold']}")
    if s.get("max_threshold") is not None and worst > float(s["max_threshold"]):
        raise _Threshold(f"max error {worst:.4f} bps above {s['max_threshold']}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .calibrate import synthetic_history, write_history_csv
    from .optimize import load_model
    from .sim import SimConfig, simulate_batch, write_trajectories

    s = _settings(args, {"paths": 10, "u0": "uniform"})
    model, mparams = load_model(s["model"])
    curve = _curve(s)
    out = _out_dir(s)
    head = _header("simulate", s)
    if s.get("blocks") is not None:
        # a history is a single path; without a numeric start it begins at the target
        u0 = _u0(s["u0"])
        u0 = mparams.u_star if u0 == "uniform" else float(u0)
        history = synthetic_history(curve, model, mparams, int(s["blocks"]), u0, int(s["seed"]),
                                    jump_trials=int(s["jump_trials"]))
        write_history_csv(out / "history.csv", history, head)
    else:
        cfg = SimConfig(n_steps=int(s["n_steps"]), jump_trials=int(s["jump_trials"]), epsilon=float(s["epsilon"]),
                        mode="exact", seed=int(s["seed"]))
        batch = simulate_batch(model, curve, mparams, cfg, _u0(s["u0"]), n_paths=int(s["paths"]), record="full")
        write_trajectories(out / "trajectories.csv", batch, head)
    return EXIT_OK


# ----------------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------------

def _intensity_args(p):
    p.add_argument("--intensity", type=Path, help="intensity CSV (rate,lambda_plus,lambda_minus)")
    p.add_argument("--coefficients", type=float, nargs=4, metavar=("A0P", "A1P", "A0M", "A1M"),
                   help="linear intensities a0+ a1+ a0- a1-")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lendrate", description="Interest-rate models for lending pools.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="fit intensity curves to a pool history")
    p.add_argument("history", type=Path)
    p.add_argument("--bins", type=int, help="number of rate bins (default 4)")
    p.add_argument("-o", "--out-dir", dest="out_dir", type=Path)
    _add_common(p, sim=False)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("solve", help="optimal rate surface under linear intensities")
    _intensity_args(p)
    p.add_argument("-o", "--out-dir", dest="out_dir", type=Path)
    _add_common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("train", help="train a rate policy or parametric model")
    _intensity_args(p)
    p.add_argument("--variant", choices=("policy", "linear", "bilinear", "adaptive"))
    p.add_argument("--scale", choices=("desk", "full"), help="batch sizes and caps (default desk)")
    p.add_argument("--u0", help="start utilization or 'uniform'")
    p.add_argument("--init", type=float, nargs="+", help="parametric starting values")
    p.add_argument("--name", help="output file stem (default: the variant)")
    for key in _TRAIN_KEYS:
        p.add_argument("--" + key.replace("_", "-"), dest=key, type=float if "lr" in key or key == "stop_tol" else int)
    p.add_argument("-o", "--out-dir", dest="out_dir", type=Path)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="PnL statistics of trained models")
    p.add_argument("model", type=Path, nargs="+")
    _intensity_args(p)
    p.add_argument("--u0", nargs="+", help="start utilizations and/or 'uniform' (default 0.9 0.95 1)")
    p.add_argument("--paths", type=int, help="paths per model and start (default 100000)")
    p.add_argument("--mode", help="simulator mode; only 'exact' is accepted")
    p.add_argument("-o", "--out-dir", dest="out_dir", type=Path)
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("validate", help="error metrics between two rate surfaces")
    p.add_argument("candidate", type=Path)
    p.add_argument("reference", type=Path)
    p.add_argument("--mean-threshold", dest="mean_threshold", type=float, help="bps")
    p.add_argument("--max-threshold", dest="max_threshold", type=float, help="bps")
    _add_common(p, risk=False, sim=False)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("simulate", help="simulate a model: trajectory dump or a synthetic pool history")
    p.add_argument("model", type=Path)
    _intensity_args(p)
    p.add_argument("--u0", help="start utilization or 'uniform' (a --blocks history starts at u* unless given a number)")
    p.add_argument("--paths", type=int, help="paths in the trajectory dump (default 10)")
    p.add_argument("--blocks", type=int, help="write history.csv of this many blocks instead")
    p.add_argument("-o", "--out-dir", dest="out_dir", type=Path)
    _add_common(p)
    p.set_defaults(func=cmd_simulate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logging.captureWarnings(True)
    try:
        _threads(args.threads)
        return args.func(args)
    except _Threshold as exc:
        print(f"threshold exceeded: {exc}", file=sys.stderr)
        return EXIT_THRESHOLD
    except CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    except DivergenceError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except (ConfigurationError, DomainError, ShapeError, LendrateError, OSError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
