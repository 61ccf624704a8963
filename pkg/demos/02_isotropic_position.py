"""
Putting a cloud in isotropic position
=====================================

A skewed Gaussian cloud is mapped so that its radial projection has second
moment Id/n. Clouds that put too much mass on a subspace cannot be fixed
this way; the error says which subspace is to blame.
"""
import numpy as np

from radial_marginals.experiments import geometric_measure
from radial_marginals.measures import WeightedPointCloud, pushforward, radial_project
from radial_marginals.positioning import (PositioningError, decency_alpha, isotropic_position,
                                          moment_position, second_moment)

rng = np.random.default_rng(0)
n = 6
A = rng.standard_normal((n, n))
cloud = WeightedPointCloud.uniform(rng.standard_normal((500, n)) @ A)

print("decency alpha:", decency_alpha(cloud, max_dim=2).alpha, "(1/n =", 1 / n, ")")

res = isotropic_position(cloud)
print(f"converged={res.converged} after {res.iterations} iterations, residual {res.residual:.2e}")
M = second_moment(radial_project(pushforward(cloud, res.matrix)))
print("diag of n*M:", np.round(n * np.diag(M), 10))

# The geometric measure puts half its mass on one axis.
g = geometric_measure(n)
try:
    isotropic_position(g)
except PositioningError as exc:
    print("\n", exc)
    print("offending basis:", np.round(exc.basis, 3))

# Splitting along the heavy subspace still bounds the directional moments.
mp = moment_position(g, epsilon=0.05)
print(f"split position: sup {mp.sup:.4f} <= alpha + eps = {mp.target:.4f}")
