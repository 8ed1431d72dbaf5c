# # Extremal flows of a discontinuous increasing field
#
# The field b(x) = sgn x pushes everything away from the origin, so the ODE
# started at 0 has two extreme solutions, t and -t. Regularizing the field
# from above or below and letting the regularization vanish singles out
# the maximal and the minimal flow.

# +
import numpy as np

from monoflow import Grid
from monoflow.continuity import pushforward_solve
from monoflow.fields import sign_field
from monoflow.flow_engine import maximal_minimal_flow, measure_bound
# -

grid = Grid.from_bounds([-1], [1], 0.01)
times = np.linspace(0.0, 1.0, 6)
flows = maximal_minimal_flow(sign_field(), 0.0, 1.0, grid, times=times)
i0 = grid.index_of([0.0])[0]

# The gap between the two flows at the origin opens linearly, at rate 2.

for k, t in enumerate(times):
    up, lo = flows.maximal.at(t)[i0, 0], flows.minimal.at(t)[i0, 0]
    print(f"t={t:.1f}  maximal {up:+.3f}  minimal {lo:+.3f}  gap {flows.gap[k, i0]:.3f}  (2t = {2 * t:.1f})")

# Away from the origin both flows agree with the classical solution.

away = np.abs(grid.axis(0)) > 0.05
print("max gap away from 0:", flows.gap[:, away].max())

# ## No concentration, but a vacuum
#
# Preimages of a set never have more measure than the set itself times the
# expansion factor. The interval (-1/2, 1/2) is never reached at t = 1:
# the flow has emptied (-t, t).

rep = measure_bound(flows.maximal, (np.array([-0.5]), np.array([0.5])), 0.0, 1.0)
print(f"|A| = {rep.measure:.2f}, |preimage| = {rep.preimage:.3f}, bound {rep.bound:.2f}")

# Pushing a uniform density forward shows the same picture.

big = Grid.from_bounds([-3], [3], 0.02)
dens = pushforward_solve(sign_field(), lambda x: 0.5 * (np.abs(x[..., 0]) <= 1.0), big, [0.0, 1.0],
                         n_particles=20_000, seed=0, sample_box=([-1.0], [1.0]))
x = dens.bins.axis(0)
h1 = dens.histograms[dens.index(1.0)]
for lo_, hi_ in [(-0.9, 0.9), (1.1, 1.9), (-1.9, -1.1)]:
    sel = (x > lo_) & (x < hi_)
    print(f"mean density on ({lo_:+.1f}, {hi_:+.1f}) at t=1: {h1[sel].mean():.3f}")
print("mass:", dens.mass(1.0))
