import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import MARKET_MINUS, MARKET_PLUS, MARKET_RATES
from lendrate.core import CalibrationError, ConfigurationError, DomainError
from lendrate.intensity import (
    LinearIntensity,
    PiecewiseIntensity,
    as_piecewise,
    equilibrium_rate,
    eval_linear,
    eval_piecewise,
    post_process,
    read_intensity_csv,
    write_intensity_csv,
)


def test_eval_linear(toy_curve):
    assert eval_linear(toy_curve, 0.0) == pytest.approx((0.05, 0.0))
    assert eval_linear(toy_curve, 0.1) == pytest.approx((0.03, 0.025))
    assert eval_linear(toy_curve, 0.5) == pytest.approx((0.0, 0.125))


def test_linear_sign_constraints():
    with pytest.raises(ConfigurationError):
        LinearIntensity(0.05, 0.2, 0.0, 0.25)


def test_eval_piecewise(market_curve):
    lp, lm = eval_piecewise(market_curve, 0.0545)
    assert (lp, lm) == pytest.approx((0.0067, 0.0008))
    lp, _ = eval_piecewise(market_curve, 0.0561)
    assert lp == pytest.approx(0.0054)
    assert eval_piecewise(market_curve, 0.0) == pytest.approx((0.0067, 0.0))
    with pytest.raises(DomainError):
        eval_piecewise(market_curve, 0.3)


def test_knots_exact(market_curve):
    lp, lm = eval_piecewise(market_curve, market_curve.rates)
    assert np.array_equal(lp, market_curve.lambda_plus)
    assert np.array_equal(lm, market_curve.lambda_minus)


@given(st.floats(0, 0.25), st.floats(0, 0.25))
def test_monotone(a, b):
    curve = PiecewiseIntensity(MARKET_RATES, MARKET_PLUS, MARKET_MINUS)
    lo, hi = min(a, b), max(a, b)
    p1, m1 = eval_piecewise(curve, lo)
    p2, m2 = eval_piecewise(curve, hi)
    assert p1 >= p2 - 1e-15 and m1 <= m2 + 1e-15


def test_invalid_knots():
    with pytest.raises(ConfigurationError):
        PiecewiseIntensity([0, 0.1], [0.1, 0.2], [0, 0.1])     # lambda_plus increasing
    with pytest.raises(ConfigurationError):
        PiecewiseIntensity([0.1, 0.0], [0.1, 0.1], [0, 0.1])


def test_post_process_market_knots():
    raw = [(0.0545, 0.0067, 0.0008), (0.0555, 0.0067, 0.0029), (0.0567, 0.0041, 0.009), (0.058, 0.0015, 0.0222)]
    c = post_process(raw, 0.0, 0.25)
    assert c.rates[0] == 0.0 and c.rates[-1] == 0.25
    assert c.lambda_plus[0] == pytest.approx(0.0067)
    assert c.lambda_minus[0] == 0.0
    assert c.lambda_plus[-1] == 0.0
    # the reference boundary value comes from unrounded knots, 2% covers the rounding
    assert c.lambda_minus[-1] == pytest.approx(1.9485, rel=0.02)
    assert np.allclose(c.lambda_plus[1:-1], [p[1] for p in raw])


def test_post_process_idempotent(market_curve):
    pts = np.stack([market_curve.rates, market_curve.lambda_plus, market_curve.lambda_minus], axis=1)
    assert post_process(pts, 0.0, 0.25) == market_curve


def test_post_process_floor():
    c = post_process([(0.1, 0.01, 0.01), (0.2, 0.02, 0.05)], 0.0, 0.3)
    assert c.lambda_minus[0] == 0.0
    assert np.all(np.diff(c.lambda_plus) <= 0)


def test_post_process_errors():
    with pytest.raises(CalibrationError):
        post_process([(0.1, 0.01, 0.01)], 0.0, 0.3)


def test_equilibrium(market_curve, toy_curve):
    assert equilibrium_rate(market_curve) == pytest.approx(0.056, abs=5e-4)
    assert equilibrium_rate(toy_curve) == pytest.approx(0.05 / 0.45)
    flat = PiecewiseIntensity([0.0, 0.2], [0.01, 0.01], [0.01, 0.01])
    assert equilibrium_rate(flat) == 0.0
    never = PiecewiseIntensity([0.0, 0.2], [0.01, 0.01], [0.0, 0.001])
    assert equilibrium_rate(never) is None


def test_as_piecewise_exact(toy_curve):
    pw = as_piecewise(toy_curve, 0.0, 0.4)
    r = np.linspace(0, 0.4, 97)
    assert np.allclose(eval_piecewise(pw, r), eval_linear(toy_curve, r), atol=1e-15)


def test_csv_round_trip(tmp_path, market_curve):
    path = tmp_path / "c.csv"
    write_intensity_csv(path, market_curve, {"source": "test"})
    assert read_intensity_csv(path) == market_curve
    assert path.read_text().startswith("# source=test\nrate,lambda_plus,lambda_minus\n")


def test_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("")
    with pytest.raises(ConfigurationError):
        read_intensity_csv(p)
    p.write_text("rate,lambda_plus,lambda_minus\n0,a,0\n")
    with pytest.raises(ConfigurationError):
        read_intensity_csv(p)
