"""
Comparing rate models by risk-adjusted PnL
==========================================

The protocol earns r U per block, pays phi (r - r_bar)^2 for moving the
rate and eta (U - u*)^2 at the horizon for being over-utilized.  We run three
calibrated curves through the exact simulator on a market intensity curve.
"""

# %%
from lendrate.core import RiskParams
from lendrate.intensity import PiecewiseIntensity
from lendrate.optimize import ParametricModel
from lendrate.report import raw_pnl, risk_adjusted_pnl, stats
from lendrate.sim import SimConfig, simulate_batch

market = PiecewiseIntensity(
    [0.0, 0.0545, 0.0555, 0.0567, 0.058, 0.25],
    [0.0067, 0.0067, 0.0067, 0.0041, 0.0015, 0.0],
    [0.0, 0.0008, 0.0029, 0.009, 0.0222, 1.9485],
)
params = RiskParams(delta=0.001)
models = {
    "linear": ParametricModel("linear", [0.0, 0.0738], 0.9, 0.0, 0.25),
    "bilinear": ParametricModel("bilinear", [0.0, 0.0634, 0.0734], 0.9, 0.0, 0.25),
    "adaptive": ParametricModel("adaptive", [0.0641, 0.0015, 0.0294, 1.825], 0.9, 0.0, 0.25),
}
config = SimConfig(n_steps=100, jump_trials=10, mode="exact", seed=0)

# %%
for u0 in (0.9, 0.95, 1.0):
    for name, model in models.items():
        batch = simulate_batch(model, market, params, config, u0, n_paths=20_000)
        ra, raw = stats(risk_adjusted_pnl(batch)), stats(raw_pnl(batch))
        print(f"u0={u0:<5} {name:9s} risk-adjusted {ra.mean:7.1f} ({ra.std:5.1f}) bps   raw {raw.mean:7.1f} bps")
