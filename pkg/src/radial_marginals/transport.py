"""L1 transport distance on the unit sphere with the geodesic ground metric."""
from __future__ import annotations

import csv
import math
import os
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

# POT probes every installed array backend on import; we only need numpy.
for _backend in ("PYTORCH", "JAX", "CUPY", "TENSORFLOW"):
    os.environ.setdefault(f"POT_BACKEND_DISABLE_{_backend}", "1")
import ot  # noqa: E402

from .measures import (DimensionMismatchError, MeasureError, SphericalMeasure,
                       UNIT_NORM_TOL, WeightedPointCloud)

DEFAULT_ATOM_CAP = 20_000
NETWORK_SIMPLEX_ITERS = 10 ** 9
CERTIFICATE_TOL = 1e-9


class AtomCapExceeded(MeasureError):
    pass


class TransportSolverError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# ground metric
# ---------------------------------------------------------------------------

def _check_unit(x: np.ndarray, what: str):
    norms = np.linalg.norm(x, axis=-1)
    if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
        raise MeasureError(f"{what} must be unit vectors")


def geodesic_distance(x, y) -> float:
    """Great-circle distance between two unit vectors.

    On S^0 = {-1, +1} the metric is pi times the indicator of x != y.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape or x.ndim != 1:
        raise DimensionMismatchError("points must be vectors of equal dimension")
    _check_unit(x, "x")
    _check_unit(y, "y")
    return float(geodesic_cost(x[None, :], y[None, :])[0, 0])


def geodesic_cost(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Pairwise geodesic distances between rows of X and rows of Y.

    Evaluated as 2*atan2(|x-y|, |x+y|), which equals arccos(x.y) but stays
    accurate near 0 and near pi where arccos loses half its digits.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.shape[1] != Y.shape[1]:
        raise DimensionMismatchError("cost matrix between different dimensions")
    if X.shape[1] == 1:
        return np.where(X[:, :1] == Y[:, 0][None, :], 0.0, math.pi)
    diff = cdist(X, Y)
    summ = cdist(X, -Y)
    return 2.0 * np.arctan2(diff, summ)


# ---------------------------------------------------------------------------
# plans and references
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransportPlan:
    """Sparse optimal coupling with its cost and optimality certificate."""

    source_index: np.ndarray
    target_index: np.ndarray
    mass: np.ndarray
    cost: float
    duality_gap: float = 0.0
    dual_violation: float = 0.0
    slackness_violation: float = 0.0

    @property
    def certified(self) -> bool:
        return max(self.duality_gap, self.dual_violation,
                   self.slackness_violation) <= CERTIFICATE_TOL

    def __len__(self):
        return len(self.mass)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["source_idx", "target_idx", "mass"])
            for i, j, m in zip(self.source_index, self.target_index, self.mass):
                w.writerow([int(i), int(j), f"{m:.12g}"])


def uniform_sphere_points(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    """``count`` independent uniform points on S^{dim-1} via normalized Gaussians."""
    g = rng.standard_normal((count, dim))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    # a Gaussian vector is zero with probability 0; redraw anyway if it happens
    while np.any(norms < 1e-300):
        bad = norms[:, 0] < 1e-300
        g[bad] = rng.standard_normal((int(bad.sum()), dim))
        norms = np.linalg.norm(g, axis=1, keepdims=True)
    return g / norms


def _seed_tuple(seed) -> tuple[int, ...]:
    if isinstance(seed, (tuple, list)):
        return tuple(int(s) for s in seed)
    return (int(seed),)


@dataclass(frozen=True)
class UniformReference:
    """Sampled stand-in for the uniform measure on S^{dim-1}.

    The same ``(dim, sample_count, seed)`` always realizes the same atoms. Seeds
    may be integers or tuples of integers; :meth:`derive` spawns independent
    child references deterministically.
    """

    dim: int
    sample_count: int
    seed: int | tuple = 0

    def __post_init__(self):
        if self.dim < 1 or self.sample_count < 1:
            raise MeasureError("reference needs dim >= 1 and sample_count >= 1")
        object.__setattr__(self, "seed", self.seed if isinstance(self.seed, int)
                           else _seed_tuple(self.seed))

    @cached_property
    def measure(self) -> SphericalMeasure:
        rng = np.random.default_rng(list(_seed_tuple(self.seed)))
        pts = uniform_sphere_points(rng, self.sample_count, self.dim)
        return SphericalMeasure(pts, np.full(self.sample_count, 1.0 / self.sample_count))

    @property
    def points(self) -> np.ndarray:
        return self.measure.points

    def derive(self, index: int) -> "UniformReference":
        return UniformReference(self.dim, self.sample_count,
                                _seed_tuple(self.seed) + (int(index),))

    def repeat(self, index: int) -> "UniformReference":
        """Reference used for repeat ``index``; repeat 0 is this reference itself."""
        return self if index == 0 else self.derive(index)


# ---------------------------------------------------------------------------
# exact distances
# ---------------------------------------------------------------------------

def _positive_part(m: WeightedPointCloud):
    keep = m.weights > 0
    return m.points[keep], m.weights[keep], np.flatnonzero(keep)


def _spherical(m, what) -> SphericalMeasure:
    if isinstance(m, SphericalMeasure):
        return m
    if isinstance(m, WeightedPointCloud):
        return SphericalMeasure(m.points, m.weights)
    raise TypeError(f"{what} must be a SphericalMeasure")


def w1_exact(a: SphericalMeasure, b: SphericalMeasure,
             atom_cap: int = DEFAULT_ATOM_CAP) -> tuple[float, TransportPlan]:
    """Exact W1 by network simplex, with a dual certificate.

    The returned plan records the duality gap, the worst dual-feasibility
    violation and the worst complementary-slackness violation.
    """
    a = _spherical(a, "a")
    b = _spherical(b, "b")
    if a.dim != b.dim:
        raise DimensionMismatchError(f"dimensions {a.dim} and {b.dim} differ")
    xa, wa, ia = _positive_part(a)
    xb, wb, ib = _positive_part(b)
    if len(wa) + len(wb) > atom_cap:
        raise AtomCapExceeded(
            f"{len(wa)} + {len(wb)} atoms exceed the exact-LP cap of {atom_cap}; "
            "entropic or assignment approximations are not provided")
    cost = geodesic_cost(xa, xb)
    # network simplex wants exactly balanced marginals
    wa = wa / wa.sum()
    wb = wb / wb.sum()
    plan, log = ot.emd(wa, wb, cost, numItermax=NETWORK_SIMPLEX_ITERS, log=True)
    if log.get("warning"):
        raise TransportSolverError(f"network simplex did not finish: {log['warning']}")
    u = np.asarray(log["u"])
    v = np.asarray(log["v"])
    value = float(np.sum(plan * cost))
    reduced = cost - u[:, None] - v[None, :]
    dual_violation = float(max(0.0, -reduced.min()))
    support = plan > 0
    slack = float(np.abs(reduced[support]).max()) if support.any() else 0.0
    gap = abs(value - float(wa @ u + wb @ v))
    si, tj = np.nonzero(support)
    result = TransportPlan(ia[si], ib[tj], plan[si, tj], value, gap, dual_violation, slack)
    return value, result


def _circle_w1(ta, wa, tb, wb) -> float:
    """W1 on the unit circle (arc-length metric) from angles in [0, 2pi)."""
    theta = np.concatenate([ta, tb])
    signed = np.concatenate([wa, -wb])
    order = np.argsort(theta, kind="mergesort")
    theta = theta[order]
    cum = np.cumsum(signed[order])
    arcs = np.diff(np.append(theta, theta[0] + 2 * math.pi))
    # min over alpha of sum arcs*|cum - alpha| is attained at a weighted median
    o = np.argsort(cum, kind="mergesort")
    c = np.cumsum(arcs[o])
    k = int(np.searchsorted(c, 0.5 * c[-1]))
    alpha = cum[o][min(k, len(o) - 1)]
    return float(np.sum(arcs * np.abs(cum - alpha)))


def w1_distance(a: SphericalMeasure, b: SphericalMeasure) -> float:
    """W1 value only, using closed forms where they exist.

    d = 1 gives pi times total variation; d = 2 uses the circle formula;
    otherwise the network simplex without a plan.
    """
    if a.dim != b.dim:
        raise DimensionMismatchError(f"dimensions {a.dim} and {b.dim} differ")
    d = a.dim
    if d == 1:
        pa = float(a.weights[a.points[:, 0] > 0].sum())
        pb = float(b.weights[b.points[:, 0] > 0].sum())
        return math.pi * abs(pa - pb)
    if d == 2:
        ta = np.mod(np.arctan2(a.points[:, 1], a.points[:, 0]), 2 * math.pi)
        tb = np.mod(np.arctan2(b.points[:, 1], b.points[:, 0]), 2 * math.pi)
        return _circle_w1(ta, a.weights, tb, b.weights)
    xa, wa, _ = _positive_part(a)
    xb, wb, _ = _positive_part(b)
    return w1_from_cost(wa, wb, geodesic_cost(xa, xb))


def w1_from_cost(wa: np.ndarray, wb: np.ndarray, cost: np.ndarray) -> float:
    """Network-simplex W1 value for positive weights and a precomputed cost matrix."""
    value, log = ot.emd2(wa / wa.sum(), wb / wb.sum(), cost,
                         numItermax=NETWORK_SIMPLEX_ITERS, log=True)
    if log.get("warning"):
        raise TransportSolverError(f"network simplex did not finish: {log['warning']}")
    return float(value)


def w1_to_uniform_samples(a: SphericalMeasure, ref: UniformReference,
                          repeats: int = 3) -> np.ndarray:
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    a = _spherical(a, "a")
    if a.dim != ref.dim:
        raise DimensionMismatchError(f"measure dim {a.dim} vs reference dim {ref.dim}")
    return np.array([w1_distance(a, ref.repeat(i).measure) for i in range(repeats)])


def w1_to_uniform(a: SphericalMeasure, ref: UniformReference,
                  repeats: int = 3) -> tuple[float, float]:
    """Mean and min-max spread of W1(a, reference) over ``repeats`` references.

    Repeat 0 uses ``ref`` itself and repeat i uses ``ref.derive(i)``.
    """
    vals = w1_to_uniform_samples(a, ref, repeats)
    return float(vals.mean()), float(vals.max() - vals.min())


# ---------------------------------------------------------------------------
# lower bounds
# ---------------------------------------------------------------------------

Witness = Callable[[np.ndarray], np.ndarray]


def coordinate_witness(k: int, sign: float = 1.0) -> Witness:
    """x -> sign * x_k, which is 1-Lipschitz for the geodesic metric."""
    def phi(x):
        return sign * x[:, k]
    phi.__name__ = f"coord{k}{'+' if sign > 0 else '-'}"
    return phi


def distance_witness(p, sign: float = 1.0) -> Witness:
    """x -> sign * rho(x, p)."""
    p = np.asarray(p, dtype=float).reshape(1, -1)

    def phi(x):
        return sign * geodesic_cost(x, p)[:, 0]
    return phi


def default_witnesses(a: SphericalMeasure, b: SphericalMeasure) -> list[Witness]:
    """Signed coordinates plus signed distances to every atom of a and b."""
    d = a.dim
    ws = [coordinate_witness(k, s) for k in range(d) for s in (1.0, -1.0)]
    for p in np.vstack([a.points, b.points]):
        ws.append(distance_witness(p, 1.0))
        ws.append(distance_witness(p, -1.0))
    return ws


def kr_dual_lower_bound(a: SphericalMeasure, b: SphericalMeasure,
                        witnesses: Sequence[Witness]) -> float:
    """max over witnesses of the integral of phi against (a - b).

    Each witness must be 1-Lipschitz for the geodesic metric; the result is
    then a lower bound on W1(a, b).
    """
    if a.dim != b.dim:
        raise DimensionMismatchError(f"dimensions {a.dim} and {b.dim} differ")
    witnesses = list(witnesses)
    if not witnesses:
        raise ValueError("need at least one witness function")
    best = -math.inf
    for phi in witnesses:
        val = float(a.weights @ phi(a.points) - b.weights @ phi(b.points))
        best = max(best, val)
    return best


def distance_to_support(points: np.ndarray, support: np.ndarray) -> np.ndarray:
    """Geodesic distance from each row of ``points`` to the nearest support atom."""
    if support.shape[1] == 1:
        present = set(np.unique(support[:, 0]).tolist())
        return np.array([0.0 if v in present else math.pi for v in points[:, 0]])
    # chord length is monotone in geodesic distance, so the Euclidean nearest
    # neighbour is also the geodesic one
    _, idx = cKDTree(support).query(points)
    near = support[idx]
    return 2.0 * np.arctan2(np.linalg.norm(points - near, axis=1),
                            np.linalg.norm(points + near, axis=1))


def support_lower_bound(a: SphericalMeasure, ref: UniformReference) -> float:
    """Mean over reference atoms of the distance to supp(a).

    x -> dist(x, supp a) is 1-Lipschitz and vanishes on supp a, so this is a
    lower bound on W1(a, reference).
    """
    if a.dim != ref.dim:
        raise DimensionMismatchError(f"measure dim {a.dim} vs reference dim {ref.dim}")
    supp = a.points[a.weights > 0]
    if len(supp) == 0:
        raise MeasureError("measure has empty support")
    ref_m = ref.measure
    return float(ref_m.weights @ distance_to_support(ref_m.points, supp))
