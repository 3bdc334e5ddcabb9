"""
Calibrating arrival intensities from a pool history
===================================================

A pool history is a block-by-block record of utilization and rate.  We
generate one from a known curve, cut utilization changes into jumps of size
delta, bin them by rate and fit a Skellam law per bin.  The fitted knots
should land near the curve that generated the data.
"""

# %%
import numpy as np

from lendrate.calibrate import bin_by_rate, calibrate_intensities, increments_from_history, synthetic_history
from lendrate.core import RiskParams
from lendrate.intensity import PiecewiseIntensity, eval_piecewise
from lendrate.optimize import ParametricModel

truth = PiecewiseIntensity(
    [0.0, 0.0545, 0.0555, 0.0567, 0.058, 0.25],
    [0.0067, 0.0067, 0.0067, 0.0041, 0.0015, 0.0],
    [0.0, 0.0008, 0.0029, 0.009, 0.0222, 1.9485],
)
params = RiskParams(delta=0.001)
rate_model = ParametricModel("bilinear", [0.0, 0.0634, 0.0734], u_star=0.9, r_max=0.25)

# %%
# 50k blocks driven by a kinked rate curve.
history = synthetic_history(truth, rate_model, params, n_blocks=50_000, u0=0.9, seed=1)
data = increments_from_history(history, params.delta)
binned = bin_by_rate(data, K=4)
print("observations per bin:", binned.counts)

# %%
curve, fits, _ = calibrate_intensities(history, params.delta, 4, 0.0, 0.25, return_fits=True)
for b in fits:
    if b.fit is None:
        continue
    lp, lm = eval_piecewise(truth, b.mean_rate)
    print(f"r={b.mean_rate:.4f} n={b.fit.n:6d}  "
          f"l+={b.fit.lambda_plus:.4f}+-{b.fit.ci_plus:.4f} (true {lp:.4f})  "
          f"l-={b.fit.lambda_minus:.4f}+-{b.fit.ci_minus:.4f} (true {lm:.4f})")
print("calibrated knots:", np.round(curve.rates, 4))
