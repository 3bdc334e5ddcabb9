import json

import numpy as np
import pytest

from lendrate.core import ConfigurationError, RiskParams, TrainingError
from lendrate.intensity import LinearIntensity
from lendrate.optimize import (
    Adam,
    AdamState,
    GridPolicy,
    ParametricModel,
    TrainConfig,
    adam_step,
    draw_sample,
    eval_adaptive_model,
    eval_bilinear_model,
    eval_linear_model,
    evaluate,
    load_model,
    penalty_and_gradient,
    save_model,
    train_parametric,
    train_policy,
)
from lendrate.sim import SimConfig

SMALL = RiskParams(delta=0.01, horizon_T=20.0)
CFG = SimConfig(n_steps=20, jump_trials=2, mode="relaxed", seed=5)


def test_linear_model():
    assert eval_linear_model([0.0, 0.0738], 0.9, 0.9) == pytest.approx(0.0738)
    assert eval_linear_model([0.01, 0.05], 0.0, 0.9) == 0.01


def test_bilinear_model():
    m = [0.0, 0.0634, 0.0734]
    assert eval_bilinear_model(m, 0.95, 0.9) == pytest.approx(0.1001)
    assert eval_bilinear_model(m, 1.0, 0.9) == pytest.approx(0.1368)
    assert eval_bilinear_model(m, 0.0, 0.9) == 0.0
    assert eval_bilinear_model([0.01, 0.02, 0.03], 1.0, 1.0) == pytest.approx(0.03)


def test_adaptive_model():
    m = [0.0641, 0.0015, 0.0294, 1.825]
    r, st = eval_adaptive_model(m, 1.0, 0.0, None, 0.9)
    assert r == pytest.approx(0.0641 * 1.825)
    r, _ = eval_adaptive_model(m, 0.0, 0.0, None, 0.9)
    assert r == pytest.approx(0.0641 * 0.0294)
    # at target the level stays put
    r0, st = eval_adaptive_model(m, 0.9, 0.0, None, 0.9)
    r1, st = eval_adaptive_model(m, 0.9, 5.0, st, 0.9)
    assert r0 == r1 == pytest.approx(0.0641)
    # above target the level grows
    _, st = eval_adaptive_model(m, 1.0, 0.0, None, 0.9)
    r2, st = eval_adaptive_model(m, 0.9, 10.0, st, 0.9)
    assert r2 == pytest.approx(0.0641 * np.exp(0.0015 * 10))
    with pytest.raises(ConfigurationError):
        eval_adaptive_model(m, 0.9, 1.0, st, 0.9)


def test_projection():
    m = ParametricModel("bilinear", [-0.1, 0.05, -0.2], 0.9).projected()
    assert np.all(m.values >= 0)
    a = ParametricModel("adaptive", [-1.0, 0.1, 0.1, 1.0], 0.9).projected()
    assert a.values[0] > 0
    g = GridPolicy(np.array([[-0.1, 0.3], [0.1, 0.2]]), 0.0, 0.25).projected()
    assert g.theta.min() == 0.0 and g.theta.max() == 0.25


def test_adam():
    p = np.array([1.0, 2.0])
    st = AdamState.zeros(2)
    assert np.array_equal(adam_step(p, np.zeros(2), st, 0.01), p)
    st = AdamState.zeros(2)
    p1 = adam_step(p, np.array([3.0, -0.5]), st, 0.01)
    assert np.allclose(p1 - p, [0.01, -0.01])
    p2 = adam_step(p1, np.array([3.0, -0.5]), st, 0.01)
    assert np.all(np.abs(p2 - p1) <= np.abs(p1 - p) + 1e-15)


def _fd(model, curve, sample, j, h=1e-6):
    if isinstance(model, GridPolicy):
        th = model.theta.ravel().copy()
        th[j] += h
        a = evaluate(model.with_theta(th), curve, SMALL, CFG, sample, want_grad=False).value
        th[j] -= 2 * h
        b = evaluate(model.with_theta(th), curve, SMALL, CFG, sample, want_grad=False).value
    else:
        v = np.array(model.values)
        v[j] += h
        a = evaluate(model.with_values(v), curve, SMALL, CFG, sample, want_grad=False).value
        v[j] -= 2 * h
        b = evaluate(model.with_values(v), curve, SMALL, CFG, sample, want_grad=False).value
    return (a - b) / (2 * h)


@pytest.mark.parametrize("variant,values", [
    ("bilinear", [0.005, 0.06, 0.08]),
    ("adaptive", [0.06, 0.3, 0.2, 1.8]),
    ("linear", [0.012, 0.061]),
])
def test_gradient_contract_parametric(market_curve, variant, values):
    sample = draw_sample(SMALL, CFG, "uniform", 300, (1,))
    model = ParametricModel(variant, values, 0.9, 0.0, 0.25)
    ev = evaluate(model, market_curve, SMALL, CFG, sample)
    for j in range(len(values)):
        fd = _fd(model, market_curve, sample, j)
        if abs(fd) > 1e-8:
            assert ev.gradient[j] == pytest.approx(fd, rel=1e-4)


def test_gradient_contract_grid(market_curve):
    sample = draw_sample(SMALL, CFG, "uniform", 300, (1,))
    u = np.linspace(0, 1, 101)[:, None]
    g = GridPolicy(0.05 + 0.1 * u**3 + 0.0 * np.ones((1, 20)), 0.0, 0.25)
    ev = evaluate(g, market_curve, SMALL, CFG, sample)
    for j in np.argsort(-np.abs(ev.gradient.ravel()))[:6]:
        assert ev.gradient.ravel()[j] == pytest.approx(_fd(g, market_curve, sample, j), rel=1e-4)


def test_zero_intensity_gradient():
    cfg = SimConfig(n_steps=20, jump_trials=2, mode="relaxed", seed=1)
    sample = draw_sample(SMALL, cfg, "uniform", 200, (0,))
    u = np.linspace(0, 1, 101)
    opt = GridPolicy(np.repeat((u / 14)[:, None], 20, axis=1), 0.0, 0.25)
    ev = evaluate(opt, LinearIntensity.zero(), SMALL, cfg, sample, use_penalty=False)
    assert np.max(np.abs(ev.gradient)) < 1e-15


def test_exact_mode_rejected():
    cfg = SimConfig(n_steps=20, jump_trials=2, mode="exact")
    sample = draw_sample(SMALL, cfg, "uniform", 10, (0,))
    with pytest.raises(ConfigurationError):
        evaluate(ParametricModel("linear", [0, 0.05], 0.9), LinearIntensity.zero(), SMALL, cfg, sample)


def test_penalty_gradient():
    rng = np.random.default_rng(0)
    theta = rng.uniform(0.05, 0.2, (101, 3))
    val, g = penalty_and_gradient(theta, SMALL, 0.0, 0.25)
    assert val > 0
    h = 1e-7
    for j in [(95, 1), (92, 0), (89, 2)]:
        t = theta.copy()
        t[j] += h
        up, _ = penalty_and_gradient(t, SMALL, 0.0, 0.25)
        t[j] -= 2 * h
        dn, _ = penalty_and_gradient(t, SMALL, 0.0, 0.25)
        assert g[j] == pytest.approx((up - dn) / (2 * h), rel=1e-6, abs=1e-9)
    convex = np.repeat((np.linspace(0, 1, 101) ** 2)[:, None], 3, axis=1)
    val, g = penalty_and_gradient(convex, SMALL, 0.0, 1.0)
    assert val == 0.0 and not g.any()


TINY = TrainConfig(n_steps=20, jump_trials=2, phase1_iters=3, phase1_batch=64, phase2_batch=64,
                   phase2_max_iters=20, val_batch=128, val_every=10, val_min_iter=10, epochs=2)


def test_train_policy_runs_and_is_deterministic(market_curve):
    m1, r1 = train_policy(market_curve, SMALL, TINY)
    m2, r2 = train_policy(market_curve, SMALL, TINY)
    assert np.array_equal(m1.theta, m2.theta)
    assert repr(r1.rows) == repr(r2.rows)
    assert len(r1.validations()) == 2
    assert m1.theta.min() >= 0.0 and m1.theta.max() <= 0.25


def test_train_parametric_nonnegative(market_curve, tmp_path):
    m, rep = train_parametric("bilinear", market_curve, SMALL, TINY)
    assert np.all(m.values >= 0)
    assert rep.stop_reason
    path = tmp_path / "m.json"
    save_model(path, m, SMALL, TINY, rep)
    doc = json.loads(path.read_text())
    assert doc["variant"] == "bilinear" and set(doc["parameters"]) == {"r_base", "r_slope1", "r_slope2"}
    back, params = load_model(path)
    assert np.array_equal(back.values, m.values) and params == SMALL
    first = path.read_bytes()
    save_model(path, m, SMALL, TINY, rep)
    assert path.read_bytes() == first


def test_grid_model_file(tmp_path, market_curve):
    from lendrate.hjb import write_surface_csv

    g = GridPolicy.linear_init(SMALL, 20)
    write_surface_csv(tmp_path / "s.csv", g.surface(SMALL))
    save_model(tmp_path / "g.json", g, SMALL, TINY, surface_file="s.csv")
    back, _ = load_model(tmp_path / "g.json")
    assert np.allclose(back.theta, g.theta)
    with pytest.raises(ConfigurationError):
        save_model(tmp_path / "h.json", g, SMALL, TINY)


def test_non_finite_objective_aborts(market_curve, monkeypatch):
    import lendrate.optimize.train as train

    real = train.evaluate

    def broken(*a, **k):
        ev = real(*a, **k)
        return type(ev)(float("nan"), ev.objective, ev.penalty, ev.std_error, ev.gradient)

    monkeypatch.setattr(train, "evaluate", broken)
    with pytest.raises(TrainingError):
        train_parametric("linear", market_curve, SMALL, TINY)


def test_grid_shape_checked(market_curve):
    g = GridPolicy(np.zeros((11, 20)), 0.0, 0.25)
    sample = draw_sample(SMALL, CFG, "uniform", 10, (0,))
    with pytest.raises(ConfigurationError):
        evaluate(g, market_curve, SMALL, CFG, sample)
