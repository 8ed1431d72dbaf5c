# # Choosing a shock speed
#
# The backward Burgers problem with a step at the final time has a whole
# family of weak solutions 1{x <= c(t)}, one for every shock path with
# speed between 0 and 1. The monotone fixed-point iteration finds the two
# extremes. Adding viscosity together with a weighted squared-gradient term
# selects any prescribed path in between.

# +
import numpy as np

from monoflow import Grid
from monoflow.burgers import (ShockPath, fbsde_simulate, speed_map_C, theta_for_path, u_c_exact,
                              viscous_solve)
from monoflow.nonlinear import burgers, solve_extremal
# -

# ## The two extreme solutions

grid = Grid.from_bounds([-1.0], [2.0], 0.01)
times = np.linspace(0.0, 1.0, 6)
step = lambda x: (np.asarray(x)[..., 0] <= 0).astype(float)
x = grid.axis(0)
for direction in ("from_top", "from_bottom"):
    res = solve_extremal(burgers(), step, grid, times, direction)
    fronts = [x[np.nonzero(s > 0.5)[0][-1]] for s in res.solution.components()[..., 0]]
    print(f"{direction}: {res.iterations} iterations, fronts", np.round(fronts, 2))

# ## Speed map
#
# The weight theta shifts the shock speed through C(theta), an increasing
# map from the real line onto (0, 1) with C(0) = 1/2.

for th in (-3.6, -1.0, 0.0, 1.0, 3.6):
    print(f"C({th:+.1f}) = {speed_map_C(th):.4f}")

# ## Vanishing viscosity with the selected weight

for speed in (0.25, 0.5, 0.75):
    prof = theta_for_path(ShockPath.constant_speed(speed))
    for eps in (0.04, 0.02, 0.01):
        h = eps / 4.0
        run = viscous_solve(prof, eps, np.arange(-1.0, 1.5 + h / 2, h))
        err = np.max(np.abs(run.shock - prof.path(run.times)))
        print(f"target {speed:.2f}  theta {prof.theta[0]:+.3f}  eps {eps:.2f}  measured speed "
              f"{run.measured_speed():.4f}  max shock error {err:.3f}")

# The limit profile is the member of the family with the prescribed path.

prof = theta_for_path(ShockPath.constant_speed(0.75))
run = viscous_solve(prof, 0.01, np.arange(-1.0, 1.5 + 0.00125, 0.0025))
gap = 0.0025 * np.abs(run.values[0] - u_c_exact(prof.path, 0.0, run.x)).sum()
print(f"L1 distance to 1{{x <= c(0)}} at t=0: {gap:.4f}")

# ## Characteristics with noise
#
# Along the viscous solution, noisy characteristics approach the broken
# characteristics of the selected solution as eps decreases.

pts = np.linspace(-0.5, 0.5, 11)
for eps in (0.04, 0.02, 0.01):
    h = eps / 4.0
    run = viscous_solve(prof, eps, np.arange(-2.0, 1.5 + h / 2, h))
    st = fbsde_simulate(prof, eps, run, 0.0, pts, 1000, seed=7, dt=0.01)
    print(f"eps {eps:.2f}: distance to limit characteristics {st.distance:.3f}, "
          f"backward residual mean {st.residual_mean:+.1e}")
