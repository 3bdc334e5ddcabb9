import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from lendrate.calibrate import (
    IncrementDataset,
    PoolHistory,
    bin_by_rate,
    calibrate_intensities,
    increments_from_history,
    log_bessel_i,
    read_history_csv,
    skellam_hessian,
    skellam_log_pmf,
    skellam_loglik,
    skellam_mle,
    skellam_sample,
    skellam_score,
    read_fit_report,
    write_fit_report,
    write_history_csv,
)
from lendrate.core import CalibrationError, ConfigurationError, DomainError


def _hist(u, r=None):
    u = np.asarray(u, dtype=float)
    r = np.full(u.size, 0.05) if r is None else r
    return PoolHistory.from_utilization(np.arange(u.size), u, r)


def test_increments_floor_ceil():
    d = increments_from_history(_hist([0.5, 0.5025, 0.5, 0.5]), 0.001)
    assert list(d.n) == [2, -2, 0]


def test_increments_exact_multiples_survive_rounding():
    u = np.cumsum(np.full(50, 0.001)) + 0.3
    d = increments_from_history(_hist(u), 0.001)
    assert np.all(d.n == 1)


def test_increments_need_two_rows():
    with pytest.raises(CalibrationError):
        increments_from_history(_hist([0.5]), 0.001)


def test_history_from_amounts():
    h = PoolHistory.from_amounts([1, 2], [100.0, 200.0], [50.0, 150.0], [0.01, 0.02])
    assert np.allclose(h.utilization, [0.5, 0.75])
    with pytest.raises(ConfigurationError):
        PoolHistory.from_amounts([1, 2], [100.0, 100.0], [50.0, 150.0], [0.01, 0.02])
    with pytest.raises(ConfigurationError):
        PoolHistory.from_utilization([2, 1], [0.1, 0.2], [0.0, 0.0])


def test_bins_edges():
    d = IncrementDataset(np.array([0, 1]), np.array([0.0, 1.0]))
    b = bin_by_rate(d, 2)
    assert np.allclose(b.edges, [0, 0.5, 1])
    assert list(b.index) == [0, 1]
    assert b.counts.sum() == 2


def test_bins_uniform_means(rng):
    r = rng.uniform(0, 1, 100_000)
    b = bin_by_rate(IncrementDataset(np.zeros(r.size, dtype=int), r), 4)
    mids = 0.5 * (b.edges[1:] + b.edges[:-1])
    assert np.allclose(b.mean_rate, mids, atol=0.005)


def test_bins_degenerate():
    b = bin_by_rate(IncrementDataset(np.array([0, 1, -1]), np.full(3, 0.05)), 4)
    assert b.degenerate and b.n_bins == 1


def test_bessel_values():
    assert log_bessel_i(0, 0.0) == 0.0
    assert log_bessel_i(3, 0.0) == -np.inf
    assert log_bessel_i(0, 2.0) == pytest.approx(np.log(2.2795853), rel=1e-7)
    assert np.exp(log_bessel_i(1, 2.0)) == pytest.approx(1.5906369, rel=1e-7)
    with pytest.raises(DomainError):
        log_bessel_i(0, -1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 40), st.floats(1e-6, 50.0))
def test_bessel_matches_scipy(x, z):
    ref = np.log(special.ive(x, z)) + z
    if np.isfinite(ref):
        assert log_bessel_i(x, z) == pytest.approx(ref, rel=1e-10, abs=1e-10)


def test_bessel_large_argument_no_overflow():
    assert np.isfinite(log_bessel_i(5, 2000.0))


def test_skellam_pmf_values():
    assert np.exp(skellam_log_pmf(0, 1.0, 1.0)) == pytest.approx(0.3085083, rel=1e-6)
    assert np.exp(skellam_log_pmf(2, 1.0, 0.0)) == pytest.approx(np.exp(-1) / 2)
    assert skellam_log_pmf(-1, 1.0, 0.0) == -np.inf


@pytest.mark.parametrize("lp,lm", [(0.006, 0.003), (1.0, 2.5), (7.0, 0.2)])
def test_skellam_normalized(lp, lm):
    k = np.arange(-80, 81)
    assert abs(np.exp(skellam_log_pmf(k, lp, lm)).sum() - 1.0) < 1e-10


def test_score_matches_finite_differences(rng):
    x = skellam_sample(0.8, 0.5, 2000, rng)
    s = skellam_score(x, 0.8, 0.5)
    h = 1e-6
    fd = [(skellam_loglik(x, 0.8 + h, 0.5) - skellam_loglik(x, 0.8 - h, 0.5)) / (2 * h),
          (skellam_loglik(x, 0.8, 0.5 + h) - skellam_loglik(x, 0.8, 0.5 - h)) / (2 * h)]
    assert np.allclose(s, fd, rtol=1e-5)
    H = skellam_hessian(x, 0.8, 0.5)
    assert np.allclose(H, H.T)
    assert np.all(np.linalg.eigvalsh(-H) > 0)


def test_mle_mean_identity(rng):
    for _ in range(10):
        lp, lm = rng.uniform(0.001, 2.0, 2)
        x = skellam_sample(lp, lm, 3000, rng)
        fit = skellam_mle(x)
        assert fit.lambda_plus - fit.lambda_minus == pytest.approx(x.mean(), abs=1e-8)
        assert fit.lambda_plus >= 0 and fit.lambda_minus >= 0


def test_mle_boundary_and_zero():
    fit = skellam_mle(np.array([0, 0, 1, 2, 0]))
    assert fit.lambda_minus == 0.0 and np.isnan(fit.ci_minus)
    assert fit.lambda_plus == pytest.approx(0.6)
    zero = skellam_mle(np.zeros(10))
    assert zero.lambda_plus == 0.0 and zero.lambda_minus == 0.0


def _history_for(rates, increments):
    u = 0.5 + np.concatenate(([0.0], np.cumsum(increments))) * 0.001
    return PoolHistory.from_utilization(np.arange(u.size), u, np.append(rates, rates[-1]))


def test_calibrate_recovers_two_bins(rng):
    n = 40_000
    rates = np.where(np.arange(n) % 2 == 0, 0.04, 0.08)
    # opposite drifts in the two regimes keep the path inside [0, 1]
    inc = np.where(rates < 0.06, skellam_sample(0.3, 0.1, n, rng), skellam_sample(0.1, 0.3, n, rng))
    h = _history_for(rates, inc)
    curve, fits, data = calibrate_intensities(h, 0.001, 2, 0.0, 0.25, return_fits=True)
    assert len(data) == n and [f.fit.n for f in fits] == [n // 2, n // 2]
    assert fits[0].fit.lambda_plus == pytest.approx(0.3, rel=0.1)
    assert fits[0].fit.lambda_minus == pytest.approx(0.1, rel=0.15)
    assert fits[1].fit.lambda_minus == pytest.approx(0.3, rel=0.1)
    assert curve.rates[0] == 0.0 and curve.rates[-1] == 0.25


def test_calibrate_single_bin_warns():
    h = _hist(0.5 + 0.001 * np.array([0, 1, 0, 1, 2]))
    with pytest.warns(UserWarning):
        curve = calibrate_intensities(h, 0.001, 4, 0.0, 0.25)
    assert np.all(curve.lambda_plus == curve.lambda_plus[0])


def test_history_csv(tmp_path):
    h = PoolHistory.from_amounts([1, 2, 3], [100.0, 100.0, 100.0], [50.0, 51.0, 50.5], [0.01, 0.02, 0.03])
    p = tmp_path / "h.csv"
    write_history_csv(p, h, {"seed": 1})
    back = read_history_csv(p)
    assert np.allclose(back.utilization, h.utilization) and np.array_equal(back.block_number, h.block_number)


@pytest.mark.parametrize("text,needle", [
    ("", "empty"),
    ("block_number,utilization,rate\n1,0.5,0.01\n2,x,0.01\n", "row 3"),
    ("block_number,utilization,rate\n1,0.5\n", "row 2"),
    ("block,u,r\n1,0.5,0.01\n", "header"),
])
def test_history_csv_errors(tmp_path, text, needle):
    p = tmp_path / "h.csv"
    p.write_text(text)
    with pytest.raises(ConfigurationError, match=needle):
        read_history_csv(p)


def test_fit_report(tmp_path, rng):
    h = _history_for(np.linspace(0.01, 0.2, 2000), rng.integers(-1, 2, 2000))
    _, fits, _ = calibrate_intensities(h, 0.001, 4, 0.0, 0.25, return_fits=True)
    p = tmp_path / "fit.csv"
    write_fit_report(p, fits)
    lines = p.read_text().splitlines()
    assert lines[0] == "bin_lo,bin_hi,mean_rate,lambda_plus,ci_plus,lambda_minus,ci_minus,n"
    assert len(lines) == 5
    rows = read_fit_report(p)
    assert [r["n"] for r in rows] == [b.fit.n if b.fit else 0 for b in fits]
    assert rows[0]["lambda_plus"] == fits[0].fit.lambda_plus
