import json

import numpy as np
import pytest

from lendrate.cli import main
from lendrate.hjb import read_surface_csv

SMALL = ["--delta", "0.01", "--n-steps", "20", "--horizon", "20", "--jump-trials", "2"]
TINY_TRAIN = ["--phase1-iters", "2", "--phase1-batch", "64", "--phase2-batch", "64", "--phase2-max-iters", "3",
              "--val-batch", "128", "--val-every", "1", "--val-min-iter", "1", "--epochs", "2"]
MARKET = "rate,lambda_plus,lambda_minus\n0,0.0067,0\n0.0545,0.0067,0.0008\n0.0555,0.0067,0.0029\n" \
         "0.0567,0.0041,0.009\n0.058,0.0015,0.0222\n0.25,0,1.9485\n"


@pytest.fixture
def market_file(tmp_path):
    p = tmp_path / "market.csv"
    p.write_text(MARKET)
    return p


def _body(path):
    return [line for line in path.read_text().splitlines() if not line.startswith("#")]


def test_solve_zero_intensity(tmp_path):
    assert main(["solve", "--coefficients", "0", "0", "0", "0", "-o", str(tmp_path), *SMALL]) == 0
    s = read_surface_csv(tmp_path / "rate_surface.csv")
    assert np.allclose(s.values, np.clip(s.grid.nodes / 14, 0, 0.25)[:, None], atol=1e-12)
    head = (tmp_path / "rate_surface.csv").read_text().splitlines()
    assert "# command=solve" in head and "# phi=7.0" in head
    assert (tmp_path / "value_surface.csv").exists()


def test_solve_bad_delta(tmp_path):
    assert main(["solve", "--coefficients", "0", "0", "0", "0", "--delta", "0.03", "-o", str(tmp_path)]) == 2


def test_solve_divergence(tmp_path):
    code = main(["solve", "--coefficients", "50", "0", "0", "500", "--phi", "1e-6", "--eta", "1e6",
                 "--delta", "0.01", "--n-steps", "10", "-o", str(tmp_path)])
    assert code == 4


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"delta": 0.1, "phi": 2.0, "n_steps": 5}))
    assert main(["solve", "--coefficients", "0", "0", "0", "0", "--config", str(cfg), "--phi", "5",
                 "-o", str(tmp_path)]) == 0
    s = read_surface_csv(tmp_path / "rate_surface.csv")
    assert s.grid.delta == pytest.approx(0.1) and s.times.n_steps == 5
    assert np.allclose(s.values[:, 0], np.clip(s.grid.nodes / 10, 0, 0.25))


def test_validate(tmp_path):
    main(["solve", "--coefficients", "0.05", "-0.2", "0", "0.25", "--r-max", "0.4", "-o", str(tmp_path), *SMALL])
    ref = tmp_path / "rate_surface.csv"
    assert main(["validate", str(ref), str(ref)]) == 0
    lines = ref.read_text().splitlines()
    shifted = tmp_path / "shifted.csv"
    out = []
    for line in lines:
        if line[0].isdigit():
            u, t, v = line.split(",")
            line = f"{u},{t},{float(v) + 5e-4!r}"
        out.append(line)
    shifted.write_text("\n".join(out) + "\n")
    assert main(["validate", str(shifted), str(ref), "--max-threshold", "1"]) == 1
    assert main(["validate", str(shifted), str(ref), "--max-threshold", "6"]) == 0
    other = tmp_path / "o"
    main(["solve", "--coefficients", "0", "0", "0", "0", "-o", str(other), "--delta", "0.1", "--n-steps", "20"])
    assert main(["validate", str(other / "rate_surface.csv"), str(ref)]) == 2


def test_calibrate_round_trip(tmp_path, market_file):
    rng = np.random.default_rng(0)
    n = 20_000
    rates = np.where(np.arange(n) % 2 == 0, 0.05, 0.07)
    inc = np.where(rates < 0.06, rng.poisson(0.3, n) - rng.poisson(0.1, n), rng.poisson(0.1, n) - rng.poisson(0.3, n))
    u = 0.5 + 0.001 * np.concatenate(([0], np.cumsum(inc)))
    hist = tmp_path / "h.csv"
    rows = "\n".join(f"{i},{float(u[i])!r},{float(rates[min(i, n - 1)])!r}" for i in range(n + 1))
    hist.write_text("block_number,utilization,rate\n" + rows + "\n")
    assert main(["calibrate", str(hist), "--bins", "2", "-o", str(tmp_path)]) == 0
    body = _body(tmp_path / "intensity.csv")
    assert body[0] == "rate,lambda_plus,lambda_minus"
    fit = _body(tmp_path / "fit_report.csv")
    assert len(fit) == 3
    lp = float(fit[1].split(",")[3])
    assert lp == pytest.approx(0.3, rel=0.1)


def test_calibrate_errors(tmp_path):
    empty = tmp_path / "e.csv"
    empty.write_text("")
    assert main(["calibrate", str(empty), "-o", str(tmp_path)]) == 2
    assert main(["calibrate", str(tmp_path / "missing.csv"), "-o", str(tmp_path)]) == 2
    one = tmp_path / "one.csv"
    one.write_text("block_number,utilization,rate\n1,0.5,0.05\n")
    assert main(["calibrate", str(one), "-o", str(tmp_path)]) == 3


def test_calibrate_single_rate(tmp_path):
    h = tmp_path / "h.csv"
    h.write_text("block_number,utilization,rate\n1,0.5,0.05\n2,0.501,0.05\n3,0.5,0.05\n4,0.502,0.05\n")
    with pytest.warns(UserWarning, match="one non-empty"):
        assert main(["calibrate", str(h), "-o", str(tmp_path)]) == 0


def test_train_deterministic(tmp_path, market_file):
    args = ["train", "--intensity", str(market_file), "--variant", "bilinear", *SMALL, *TINY_TRAIN]
    assert main([*args, "-o", str(tmp_path / "a")]) == 0
    assert main([*args, "-o", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "bilinear.json").read_bytes()
    assert a == (tmp_path / "b" / "bilinear.json").read_bytes()
    doc = json.loads(a)
    assert all(v >= 0 for v in doc["parameters"].values())
    assert doc["seed"] == 0
    assert (tmp_path / "a" / "bilinear_train_report.csv").exists()


def test_train_policy_and_evaluate(tmp_path, market_file):
    out = tmp_path / "m"
    assert main(["train", "--intensity", str(market_file), "--variant", "policy", *SMALL, *TINY_TRAIN,
                 "-o", str(out)]) == 0
    assert (out / "policy_surface.csv").exists()
    ev = tmp_path / "ev"
    assert main(["evaluate", str(out / "policy.json"), "--intensity", str(market_file), "--u0", "0.9", "uniform",
                 "--paths", "500", *SMALL, "-o", str(ev)]) == 0
    body = _body(ev / "stats.csv")
    assert body[0] == "model,u0,mean_bps,std_bps,p5_bps,p95_bps,n_paths"
    assert len(body) == 3 and body[1].startswith("policy,0.9,")
    assert (ev / "raw_stats.csv").exists() and (ev / "hist_policy_u0_0.9.csv").exists()


def test_evaluate_zero_intensity_and_mode(tmp_path, market_file):
    out = tmp_path / "m"
    main(["train", "--intensity", str(market_file), "--variant", "linear", *SMALL, *TINY_TRAIN, "-o", str(out)])
    ev = tmp_path / "ev"
    code = main(["evaluate", str(out / "linear.json"), "--coefficients", "0", "0", "0", "0", "--u0", "0.5",
                 "--paths", "200", *SMALL, "-o", str(ev)])
    assert code == 0
    assert float(_body(ev / "stats.csv")[1].split(",")[3]) == 0.0
    assert main(["evaluate", str(out / "linear.json"), "--intensity", str(market_file), "--mode", "relaxed",
                 *SMALL, "-o", str(ev)]) == 2


def test_simulate(tmp_path, market_file):
    out = tmp_path / "m"
    main(["train", "--intensity", str(market_file), "--variant", "bilinear", *SMALL, *TINY_TRAIN, "-o", str(out)])
    assert main(["simulate", str(out / "bilinear.json"), "--intensity", str(market_file), "--paths", "3",
                 "--u0", "0.5", *SMALL, "-o", str(tmp_path)]) == 0
    assert _body(tmp_path / "trajectories.csv")[0] == "path,step,u,x,q"
    assert main(["simulate", str(out / "bilinear.json"), "--intensity", str(market_file), "--blocks", "50",
                 "--u0", "0.5", "-o", str(tmp_path)]) == 0
    assert len(_body(tmp_path / "history.csv")) == 52
    # no numeric start: the history begins at the target utilization
    assert main(["simulate", str(out / "bilinear.json"), "--intensity", str(market_file), "--blocks", "5",
                 "-o", str(tmp_path)]) == 0
    assert _body(tmp_path / "history.csv")[1].split(",")[1] == "0.9"


def test_threads(tmp_path, monkeypatch):
    args = ["solve", "--coefficients", "0", "0", "0", "0", "-o", str(tmp_path), "--delta", "0.1"]
    assert main([*args, "--threads", "1"]) == 0
    assert main([*args, "--threads", "0"]) == 2
    monkeypatch.setenv("LENDRATE_THREADS", "x")
    assert main(args) == 2
    monkeypatch.setenv("LENDRATE_THREADS", "1")
    assert main(args) == 0
