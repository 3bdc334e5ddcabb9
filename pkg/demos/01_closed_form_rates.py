"""
Optimal rates under linear intensities
======================================

When arrivals are linear in the rate, the optimal curve comes from a
backward ODE on the utilization lattice.  This script solves it for the toy
curve lambda+ = 0.05 - 0.2 r, lambda- = 0.25 r, looks at the curve near
maturity and at how it reacts to the risk weights.
"""

# %%
import numpy as np

from lendrate.core import RiskParams
from lendrate.hjb import sensitivity_report, solve_optimal_rates, taylor_terminal_rate, terminal_rate
from lendrate.intensity import LinearIntensity, equilibrium_rate

curve = LinearIntensity(a0_plus=0.05, a1_plus=-0.2, a0_minus=0.0, a1_minus=0.25)
params = RiskParams(phi=7, eta=1500, r_bar=0.0, u_star=0.9, horizon_T=100, delta=0.01, r_max=0.4)
print("arrival curves cross at r =", round(equilibrium_rate(curve), 4))

# %%
# Full surface r*(u, t) on 101 x 101 points.
rates, h = solve_optimal_rates(curve, params, n_steps=100)
u = rates.grid.nodes
for k in (0, 45, 90, 95, 100):
    print(f"u={u[k]:.2f}  r*(t=0)={rates.values[k, 0]:.4f}  r*(T)={rates.values[k, -1]:.4f}")

# %%
# Near maturity the curve is kinked at the target utilization.  The
# first-order expansion in delta predicts a 14.5x steeper slope above u*.
exact = terminal_rate(curve, params)
approx = taylor_terminal_rate(u, curve, params)
print("largest gap to the expansion (bps):", np.abs(exact - approx).max() * 1e4)
for label, r in (("expansion", approx), ("exact slice", exact)):
    below = (r[90] - r[0]) / 0.9
    above = (r[100] - r[90]) / 0.1
    print(f"{label}: slope ratio above/below u* = {above / below:.2f}")

# %%
# Signs of the responses to r_bar, phi and eta.
for name, s in sensitivity_report(params, curve).items():
    print(f"d r*/d {name:5s}: min {s.values.min():+.3g}  max {s.values.max():+.3g}")
