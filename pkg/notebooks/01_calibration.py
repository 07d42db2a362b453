# ---
# jupyter:
#   jupytext:
#     formats: py:light
# ---

# # Calibrating the heterogeneity knob
#
# The generator controls treatment-effect heterogeneity through two log
# hazard ratios, one per subgroup. What we actually want to dial is the
# absolute risk reduction at t=1 in each subgroup, so we tabulate ARR as a
# function of beta by Monte Carlo and invert the curve.

import numpy as np

from survhte.config import ScenarioSpec
from survhte.dgp import arr_grid, calibrate, generate_trial, individual_arr, max_arr1

spec = ScenarioSpec()
config = spec.generator_config()
curve = calibrate(config, mc_size=100_000, seed=0)
print(f"P(G=1) = {curve.prevalence:.3f}")

# Both curves are nonincreasing in beta. Harm lives at positive beta.

for b in (-4, -2, -1, 0, 1, 2, 4):
    i = int(np.argmin(np.abs(curve.beta_grid - b)))
    print(f"beta={b:+d}  ARR0={curve.arr0[i]:+.3f}  ARR1={curve.arr1[i]:+.3f}")

# The population mean effect is held at zero, so every unit of benefit in
# G=1 is paid for by harm in G=0. That caps the reachable ARR1.

print(f"max ARR1 = {max_arr1(curve):.3f}")
points = arr_grid(curve, 10)
for pt in points:
    print(f"ARR1={pt.arr1_target:.3f}  ARR0={pt.arr0_target:+.3f}  "
          f"beta1={pt.beta1:+.3f}  beta0={pt.beta0:+.3f}")

# Sanity check on a large fresh sample: the average individual ARR is zero
# at every grid point.

for pt in points[::3]:
    x = generate_trial(config, pt, seed=1, n=100_000).covariates
    arr = individual_arr(x, pt.beta0, pt.beta1, config.gamma, config.subgroup, config.baseline_scale)
    print(f"ARR1={pt.arr1_target:.3f}  mean individual ARR={arr.mean():+.4f}")
