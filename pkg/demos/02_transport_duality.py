# # Transport and continuity equations by duality
#
# The backward transport equation is solved by composing the terminal datum
# with the flow; the continuity equation is its adjoint and is solved by
# pushing particles forward. Integrating one against the other gives the
# same number from both sides.

# +
import numpy as np

from monoflow import Grid
from monoflow.continuity import duality_check, pushforward_solve
from monoflow.fields import constant_field, sign_field
from monoflow.transport import TransportProblem, solve_transport, subsupersolution_residual
# -

# A step translated by a constant field.

grid = Grid.from_bounds([-2], [2], 0.01)
step = lambda x: (np.asarray(x)[..., 0] <= 0).astype(float)
times = np.linspace(0.0, 1.0, 5)
sol = solve_transport(TransportProblem(constant_field([-1.0]), step, T=1.0), grid, times)
x = grid.axis(0)
for k, t in enumerate(times):
    jump = x[np.nonzero(sol.values[k] > 0.5)[0][-1]]
    print(f"t={t:.2f}  last node at 1: {jump:+.2f}  (1 - t = {1 - t:+.2f})")

# One-sided mollification turns the discontinuous solution into a smooth
# sub- or supersolution; the residual is checked node by node. The check
# mixes centered time and upwind space differences, so its consistency
# error grows like h / eps^2: narrow mollifiers show spurious violations.

prob = TransportProblem(constant_field([-1.0]), step, T=1.0)
dense = solve_transport(prob, grid, np.linspace(0.0, 1.0, 101))
for eps in (0.1, 0.3):
    for side in ("sub", "super"):
        rep = subsupersolution_residual(dense, prob, eps, side)
        print(f"eps {eps:.1f} {side}solution check: violating fraction {rep.violation:.4f}")

# Duality on the sign field: mass 1/2 ends up in [1, 2] at t = 1.

big = Grid.from_bounds([-3], [3], 0.01)
f0 = lambda x: 0.5 * (np.abs(np.asarray(x)[..., 0]) <= 1.0)
dens = pushforward_solve(sign_field(), f0, big, [0.0, 1.0], n_particles=50_000, seed=1,
                         sample_box=([-1.0], [1.0]))
test = lambda x: ((np.asarray(x)[..., 0] >= 1.0) & (np.asarray(x)[..., 0] <= 2.0)).astype(float)
rep = duality_check(dens, test, 1.0, big)
print(f"pushforward side {rep['pushforward']:.4f}, transport side {rep['transport']:.4f}, "
      f"residual {rep['residual']:.2e}")
