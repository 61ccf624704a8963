"""
How radial is a point cloud?
============================

Certify a few small clouds and read the shell table.
"""
import math

import numpy as np

from radial_marginals.measures import WeightedPointCloud
from radial_marginals.radiality import ReferenceParams, is_eps_radial, radiality_epsilon

params = ReferenceParams(seed=0)

# A single atom: every shell is the whole measure, and it sits pi/2 from uniform.
dirac = WeightedPointCloud([[0.0, 0.0, 1.0]], [1.0])
print("Dirac:", radiality_epsilon(dirac, params).epsilon_star)

# Two antipodal atoms on the circle: W1 to uniform is pi/4.
pair = WeightedPointCloud([[1.0, 0.0], [-1.0, 0.0]], [0.5, 0.5])
rep = radiality_epsilon(pair, params)
print(f"antipodal pair: {rep.epsilon_star:.4f}  (pi/4 = {math.pi / 4:.4f})")

# A Gaussian sample is close to radial, and gets closer as it grows.
rng = np.random.default_rng(1)
for N in (200, 2000, 20000):
    cloud = WeightedPointCloud.uniform(rng.standard_normal((N, 2)))
    print(f"Gaussian N={N:>6}: epsilon_star {radiality_epsilon(cloud, params).epsilon_star:.4f}")

print()
print(rep.table())

# Checking a fixed level returns the first violating shell, if any.
ok, shell = is_eps_radial(dirac, 0.5, params)
print("\nDirac is 0.5-radial:", ok, "| violating shell mass", shell.mass)
