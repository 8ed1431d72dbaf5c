# # Noise keeps the order
#
# With additive noise and one shared Brownian path, the stochastic flow of
# an increasing field preserves the order of starting points path by path.
# Averaging a step datum over the noise gives the Gaussian CDF when there is
# no drift.

# +
import numpy as np

from monoflow import Grid
from monoflow.fields import sign_field, zero_field
from monoflow.stochastic import (NoiseSpec, coupled_order_check, em_flow, heat_step_reference,
                                 solve_second_order_te)
# -

noise = NoiseSpec.additive(1, 0.5)
starts = np.linspace(-0.9, 0.7, 10)[:, None]
kw = dict(s=0.0, t_end=1.0, dt=0.02, n_paths=5000, seed=3)
lo = em_flow(sign_field(), noise, "upper", 0.05, points=starts, **kw)
hi = em_flow(sign_field(), noise, "upper", 0.05, points=starts + 0.05, **kw)
print("largest order violation over all paths:", coupled_order_check(lo, hi))

# Where do paths started at the origin go? The noise picks a side at random,
# so the terminal law is split between the two extreme flows.

origin = em_flow(sign_field(), noise, "upper", 0.05, points=np.zeros((1, 1)), **kw)
x1 = origin.at(1.0)[:, 0, 0]
print(f"fraction ending right of 0: {np.mean(x1 > 0):.3f}; mean |X_1| = {np.abs(x1).mean():.3f}")

# Second-order transport with zero drift: u(t, x) = P(x + sqrt(2 eps) W_{T-t} <= 0).

eps = 0.05
grid = Grid.from_bounds([-1], [1], 0.25)
step = lambda x: (np.asarray(x)[..., 0] <= 0).astype(float)
sol = solve_second_order_te(zero_field(1), NoiseSpec.additive(1, np.sqrt(2 * eps)), step, grid, [0.0],
                            T=1.0, n_paths=40_000, seed=4, dt=0.1)
exact = heat_step_reference(grid.axis(0), 1.0, eps)
for xi, mc, ex in zip(grid.axis(0), sol.values[0], exact):
    print(f"x={xi:+.2f}  Monte Carlo {mc:.4f}  exact {ex:.4f}")
