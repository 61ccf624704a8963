"""Independent reference computations used to check the library.

Nothing here imports the code under test except the data containers.
"""
from __future__ import annotations

import itertools
import math

import numpy as np
from scipy import integrate
from scipy.optimize import linprog
from scipy.special import erfc


def sphere_dist(x, y):
    """Great-circle distance via arccos, the textbook formula."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if x.shape[-1] == 1:
        return 0.0 if x[0] == y[0] else math.pi
    return float(np.arccos(np.clip(x @ y, -1.0, 1.0)))


def brute_force_w1(xa, wa, xb, wb):
    """Transportation LP over the dense coupling polytope, solved with HiGHS."""
    m, k = len(wa), len(wb)
    cost = np.array([[sphere_dist(xa[i], xb[j]) for j in range(k)] for i in range(m)])
    rows = []
    for i in range(m):
        r = np.zeros(m * k)
        r[i * k:(i + 1) * k] = 1
        rows.append(r)
    for j in range(k):
        r = np.zeros(m * k)
        r[j::k] = 1
        rows.append(r)
    res = linprog(cost.reshape(-1), A_eq=np.array(rows), b_eq=np.concatenate([wa, wb]),
                  bounds=(0, None), method="highs",
                  options={"primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10})
    assert res.status == 0, res.message
    return float(res.fun)


def brute_force_tv(pa, wa, pb, wb):
    """sup over all subsets A of the joint support of |a(A) - b(A)|."""
    keys = sorted({tuple(p) for p in pa} | {tuple(p) for p in pb})
    ma = dict.fromkeys(keys, 0.0)
    mb = dict.fromkeys(keys, 0.0)
    for p, w in zip(pa, wa):
        ma[tuple(p)] += w
    for p, w in zip(pb, wb):
        mb[tuple(p)] += w
    best = 0.0
    for r in range(len(keys) + 1):
        for sub in itertools.combinations(keys, r):
            best = max(best, abs(sum(ma[s] - mb[s] for s in sub)))
    return best


def circle_w1_to_uniform_quadrature(angles, weights):
    """W1(sum w_i delta_{theta_i}, uniform) on the circle by direct quadrature.

    Uses the circle formula min_alpha integral |F(t) - t/2pi - alpha| dt with
    alpha optimized numerically, F the cumulative distribution from angle 0.
    """
    angles = np.mod(np.asarray(angles, float), 2 * math.pi)
    weights = np.asarray(weights, float)

    def F(t):
        return weights[angles <= t].sum()

    brk = sorted(set(angles.tolist()) | {0.0, 2 * math.pi})

    def objective(alpha):
        total = 0.0
        for a, b in zip(brk[:-1], brk[1:]):
            val, _ = integrate.quad(lambda t: abs(F(a) - t / (2 * math.pi) - alpha), a, b,
                                    limit=200, epsabs=1e-13)
            total += val
        return total

    from scipy.optimize import minimize_scalar
    res = minimize_scalar(objective, bounds=(-1, 1), method="bounded",
                          options={"xatol": 1e-12})
    return float(res.fun)


def mean_distance_to_equispaced(k):
    """Integral over the circle of the distance to the nearest of k equispaced points."""
    val, _ = integrate.quad(lambda t: min(t % (2 * math.pi / k), 2 * math.pi / k - t % (2 * math.pi / k)),
                            0, 2 * math.pi, limit=400, points=[2 * math.pi * i / k for i in range(k + 1)])
    return val / (2 * math.pi)


def gaussian_tv_quadrature(s1, s2):
    """Half the L1 distance between N(0, s1^2) and N(0, s2^2), by quadrature."""
    def pdf(x, s):
        return math.exp(-0.5 * (x / s) ** 2) / (s * math.sqrt(2 * math.pi))
    lo, hi = min(s1, s2), max(s1, s2)
    cross = lo * hi * math.sqrt(2 * math.log(hi / lo) / (hi * hi - lo * lo)) if lo < hi else 1.0
    # by symmetry TV = integral over [0, inf); split at the crossing for accuracy
    a, _ = integrate.quad(lambda x: abs(pdf(x, s1) - pdf(x, s2)), 0, cross, epsabs=1e-15)
    b, _ = integrate.quad(lambda x: abs(pdf(x, s1) - pdf(x, s2)), cross, np.inf, epsabs=1e-15)
    return a + b


def upper_gaussian_tail(x):
    return 0.5 * erfc(x / math.sqrt(2))


def brute_force_decency(points, weights, tol=1e-9):
    """max over all subsets S of atoms of mass(span S) / dim(span S), plus R^n."""
    P = np.asarray(points, float)
    w = np.asarray(weights, float)
    N, n = P.shape
    best = 1.0 / n
    best_basis = np.eye(n)
    for r in range(1, N + 1):
        for sub in itertools.combinations(range(N), r):
            A = P[list(sub)]
            rank = np.linalg.matrix_rank(A, tol=1e-10)
            if rank >= n:
                continue
            _, _, vt = np.linalg.svd(A)
            q = vt[:rank]
            resid = np.linalg.norm(P - P @ q.T @ q, axis=1)
            mass = w[resid <= tol * np.linalg.norm(P, axis=1)].sum()
            if mass / rank > best + 1e-15:
                best, best_basis = mass / rank, q
    return best, best_basis


def brute_force_basic(points, weights, a, tol=1e-9, mass_tol=1e-12):
    """All a-basic subspaces among spans of atom subsets, as sorted member tuples.

    Masses within ``mass_tol`` of ``a`` count as reaching it, so that sums
    like 0.49999999999999994 are not split from 0.5 by rounding.
    """
    P = np.asarray(points, float)
    w = np.asarray(weights, float)
    N, n = P.shape
    spans = {}
    for r in range(1, N + 1):
        for sub in itertools.combinations(range(N), r):
            A = P[list(sub)]
            rank = np.linalg.matrix_rank(A, tol=1e-10)
            _, _, vt = np.linalg.svd(A)
            q = vt[:rank]
            resid = np.linalg.norm(P - P @ q.T @ q, axis=1)
            members = tuple(np.flatnonzero(resid <= tol * np.linalg.norm(P, axis=1)))
            spans[members] = (rank, w[list(members)].sum())
    out = []
    for mem, (rank, mass) in spans.items():
        if mass < a - mass_tol:
            continue
        if any(set(m2) < set(mem) and r2 < rank and m2mass >= a - mass_tol
               for m2, (r2, m2mass) in spans.items()):
            continue
        out.append(mem)
    return sorted(out)


def grid_scan_epsilon(masses, w1s, grid=None):
    """Smallest grid eps at which every shell with mass >= eps has w1 <= eps."""
    masses = np.asarray(masses)
    w1s = np.asarray(w1s)
    if grid is None:
        grid = np.linspace(1e-6, math.pi, 200001)
    for eps in grid:
        if not np.any((masses >= eps) & (w1s > eps)):
            return float(eps)
    return float("inf")
