"""Decency levels, basic subspaces and linear maps that put a measure in
isotropic position (or as close to it as its subspace masses allow).
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .measures import (MeasureError, NonProperMeasureError, WeightedPointCloud,
                       as_linear_map, pushforward, radial_project)

MEMBERSHIP_TOL = 1e-9
PROJECTIVE_TOL = 1e-9
DEPENDENCE_TOL = 1e-12
DEFAULT_BUDGET = 10 ** 6


class PositioningError(MeasureError):
    """Isotropic position is unreachable because a subspace is too heavy.

    ``basis`` holds an orthonormal basis of the offending subspace as rows and
    ``mass`` its measure; isotropy needs ``mass <= dim / n``.
    """

    def __init__(self, message, basis=None, mass=None, ambient_dim=None):
        super().__init__(message)
        self.basis = None if basis is None else np.asarray(basis)
        self.mass = mass
        self.ambient_dim = ambient_dim

    @property
    def dim(self):
        return 0 if self.basis is None else self.basis.shape[0]


# ---------------------------------------------------------------------------
# second moments and subspaces
# ---------------------------------------------------------------------------

def second_moment(s) -> np.ndarray:
    """sum_i w_i x_i x_i^T for a measure on the sphere."""
    x = s.points
    m = (x * s.weights[:, None]).T @ x
    return 0.5 * (m + m.T)


def orthonormal_basis(basis, tol: float = DEPENDENCE_TOL) -> np.ndarray:
    """Orthonormal rows spanning the given rows; raises if they are dependent."""
    b = np.atleast_2d(np.asarray(basis, dtype=float))
    if b.size == 0:
        raise MeasureError("empty basis")
    q, r = np.linalg.qr(b.T)
    diag = np.abs(np.diag(r))
    scale = np.linalg.norm(b, axis=1).max()
    if diag.min() <= tol * scale:
        raise MeasureError("basis vectors are linearly dependent")
    return q.T


def in_subspace(points: np.ndarray, q: np.ndarray, tol: float = MEMBERSHIP_TOL) -> np.ndarray:
    """Rows of ``points`` lying in span(q) up to residual tol * |x|."""
    if q.shape[0] == 0:
        return np.linalg.norm(points, axis=1) == 0
    resid = points - (points @ q.T) @ q
    return np.linalg.norm(resid, axis=1) <= tol * np.linalg.norm(points, axis=1)


def subspace_mass(cloud: WeightedPointCloud, basis) -> float:
    q = orthonormal_basis(basis)
    if q.shape[1] != cloud.dim:
        raise MeasureError("basis dimension does not match the cloud")
    return float(cloud.weights[in_subspace(cloud.points, q)].sum())


def projective_groups(directions: np.ndarray, tol: float = PROJECTIVE_TOL) -> np.ndarray:
    """Label unit vectors that agree up to sign within ``tol`` (chord length).

    Candidate pairs come from sorting the sign-free key |<u, g>| for a fixed
    Gaussian vector g: two vectors within tol of each other (up to sign) have
    keys within tol * |g|. Candidates are then checked exactly.
    """
    n, dim = directions.shape
    g = np.random.default_rng(20240229).standard_normal(dim)
    key = np.abs(directions @ g)
    order = np.argsort(key, kind="mergesort")
    ks = key[order]
    reach = np.searchsorted(ks, ks + tol * np.linalg.norm(g) * (1 + 1e-9), side="right")
    parent = np.arange(n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a in np.flatnonzero(reach > np.arange(n) + 1):
        i = order[a]
        js = order[a + 1:reach[a]]
        diff = np.minimum(np.linalg.norm(directions[js] - directions[i], axis=1),
                          np.linalg.norm(directions[js] + directions[i], axis=1))
        for j in js[diff <= tol]:
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(i) for i in range(n)])
    _, labels = np.unique(roots, return_inverse=True)
    return labels.reshape(-1)


def _support_groups(cloud: WeightedPointCloud):
    if not cloud.is_proper():
        raise NonProperMeasureError("decency is defined here for proper measures only")
    keep = cloud.weights > 0
    pts = cloud.points[keep]
    w = cloud.weights[keep]
    dirs = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    labels = projective_groups(dirs)
    g = labels.max() + 1
    gw = np.zeros(g)
    np.add.at(gw, labels, w)
    first = np.full(g, -1)
    for i in range(len(labels) - 1, -1, -1):
        first[labels[i]] = i
    reps = dirs[first]
    # heaviest groups first so that a truncated enumeration sees them early
    order = np.argsort(-gw, kind="mergesort")
    return reps[order], gw[order]


# ---------------------------------------------------------------------------
# decency
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Subspace:
    basis: np.ndarray           # orthonormal rows
    mass: float

    @property
    def dim(self):
        return self.basis.shape[0]

    def to_dict(self):
        return {"basis": self.basis.tolist(), "mass": self.mass, "dim": self.dim}


@dataclass(frozen=True)
class DecencyReport:
    alpha: float
    witness: np.ndarray
    witness_mass: float
    basic_subspaces: tuple = ()
    exhaustive: bool = True
    candidates: int = 0
    threshold: float | None = None

    @property
    def witness_dim(self):
        return self.witness.shape[0]

    def is_decent(self, tol: float = 1e-12) -> bool:
        return self.alpha <= 1.0 / self.witness.shape[1] + tol

    def to_dict(self):
        return {"alpha": self.alpha, "witness": self.witness.tolist(),
                "witness_mass": self.witness_mass,
                "basic_subspaces": [s.to_dict() for s in self.basic_subspaces],
                "exhaustive": self.exhaustive, "candidates": self.candidates,
                "threshold": self.threshold}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d):
        subs = tuple(Subspace(np.asarray(s["basis"], dtype=float).reshape(s["dim"], -1), s["mass"])
                     for s in d["basic_subspaces"])
        return cls(d["alpha"], np.asarray(d["witness"], dtype=float), d["witness_mass"], subs,
                   d["exhaustive"], d["candidates"], d["threshold"])

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def __eq__(self, other):
        return isinstance(other, DecencyReport) and self.to_dict() == other.to_dict()


def _enumerate_spans(reps: np.ndarray, gw: np.ndarray, max_dim: int, budget: int):
    """Distinct atom-spanned proper subspaces, as (member mask, orthonormal basis).

    Returns the list and whether the enumeration finished within the budget.
    """
    g, n = reps.shape
    seen = {}
    used = 0
    for k in range(1, min(max_dim, n - 1) + 1):
        for combo in itertools.combinations(range(g), k):
            if used >= budget:
                return list(seen.values()), False
            used += 1
            if k == 1:
                members = np.zeros(g, dtype=bool)
                members[combo[0]] = True
                q = reps[list(combo)]
            else:
                try:
                    q = orthonormal_basis(reps[list(combo)], tol=1e-9)
                except MeasureError:
                    continue
                members = in_subspace(reps, q)
            key = members.tobytes()
            if key not in seen:
                seen[key] = (members, q)
    return list(seen.values()), True


def _decency_core(cloud, max_dim, budget):
    if max_dim < 1:
        raise ValueError("max_dim must be at least 1")
    n = cloud.dim
    reps, gw = _support_groups(cloud)
    spans, finished = _enumerate_spans(reps, gw, max_dim, budget)
    exhaustive = finished and max_dim >= min(n - 1, len(gw))
    full = Subspace(np.eye(n), 1.0)
    cands = [Subspace(q, float(gw[m].sum())) for m, q in spans]
    return cands, full, exhaustive, [m for m, _ in spans], gw


def decency_alpha(cloud: WeightedPointCloud, max_dim: int = 3,
                  threshold: float | None = None,
                  budget: int = DEFAULT_BUDGET) -> DecencyReport:
    """Largest mass(E)/dim(E) over atom-spanned subspaces of dim <= max_dim and R^n.

    For a discrete measure some maximizing subspace is spanned by the atoms it
    contains, so the value is exact when ``exhaustive`` is true.
    """
    cands, full, exhaustive, masks, gw = _decency_core(cloud, max_dim, budget)
    n = cloud.dim
    best = full
    best_ratio = 1.0 / n
    for s in sorted(cands, key=lambda s: s.dim):
        if s.mass / s.dim > best_ratio:
            best, best_ratio = s, s.mass / s.dim
    basic = ()
    if threshold is not None:
        basic = tuple(_basic_from(cands, masks, full, threshold))
    return DecencyReport(float(best_ratio), best.basis, best.mass, basic, exhaustive,
                         len(cands) + 1, threshold)


def _basic_from(cands, masks, full, a):
    out = []
    sets = [frozenset(np.flatnonzero(m).tolist()) for m in masks]
    for idx, s in enumerate(cands):
        if s.mass < a - 1e-12:
            continue
        ok = True
        for jdx, t in enumerate(cands):
            if jdx != idx and t.dim < s.dim and sets[jdx] < sets[idx] and t.mass >= a - 1e-12:
                ok = False
                break
        if ok:
            out.append(Subspace(orthonormal_basis(s.basis), s.mass))
    if full.mass >= a - 1e-12 and all(s.mass < a - 1e-12 for s in cands):
        out.append(full)
    return out


def basic_subspaces(cloud: WeightedPointCloud, a: float, max_dim: int = 3,
                    budget: int = DEFAULT_BUDGET) -> list[Subspace]:
    """a-basic subspaces: mass >= a while every proper subspace has mass < a."""
    if not 0 < a <= 1:
        raise ValueError("a must lie in (0, 1]")
    cands, full, _, masks, _ = _decency_core(cloud, max_dim, budget)
    return _basic_from(cands, masks, full, a)


# ---------------------------------------------------------------------------
# isotropic position
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PositionResult:
    matrix: np.ndarray
    residual: float
    converged: bool
    iterations: int
    trace: tuple = ()

    def __iter__(self):
        # allows ``T, residual = isotropic_position(...)``
        return iter((self.matrix, self.residual))


def isotropy_residual(cloud: WeightedPointCloud, tmap) -> float:
    """Operator norm of M(R_* T_* cloud) - Id/n."""
    s = radial_project(pushforward(cloud, tmap))
    m = second_moment(s)
    n = m.shape[0]
    return float(np.abs(np.linalg.eigvalsh(m - np.eye(n) / n)).max())


def directional_sup(cloud: WeightedPointCloud, tmap=None) -> float:
    """sup over unit theta of the integral of (x.theta)^2 against R_* T_* cloud."""
    c = cloud if tmap is None else pushforward(cloud, tmap)
    return float(np.linalg.eigvalsh(second_moment(radial_project(c)))[-1])


def _inv_sqrt_power(m: np.ndarray, s: float) -> np.ndarray:
    vals, vecs = np.linalg.eigh(m)
    vals = np.maximum(vals, 1e-300)
    return (vecs * vals ** (-0.5 * s)) @ vecs.T


def _heavy_subspace(cloud: WeightedPointCloud):
    """Cheap scan for a proper subspace E with mass(E) > dim(E)/n."""
    n = cloud.dim
    keep = cloud.weights > 0
    pts = cloud.points[keep]
    w = cloud.weights[keep]
    # the support spans a proper subspace
    _, sv, vt = np.linalg.svd(pts, full_matrices=False)
    rank = int(np.sum(sv > 1e-12 * sv[0]))
    if rank < n:
        return vt[:rank], 1.0
    reps, gw = _support_groups(cloud)
    if gw[0] > 1.0 / n + 1e-12:
        return reps[:1], float(gw[0])
    return None


def _subspace_from_map(cloud: WeightedPointCloud, tmap: np.ndarray):
    """Look for a heavy subspace among the directions that T collapses."""
    n = cloud.dim
    keep = cloud.weights > 0
    pts, w = cloud.points[keep], cloud.weights[keep]
    unit = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    _, sv, vt = np.linalg.svd(tmap)
    for k in range(1, n):
        q = vt[n - k:]
        near = np.linalg.norm(unit - (unit @ q.T) @ q, axis=1) < 1e-5
        if not near.any():
            continue
        _, s2, v2 = np.linalg.svd(pts[near], full_matrices=False)
        r = int(np.sum(s2 > 1e-9 * s2[0]))
        if r == 0 or r >= n:
            continue
        basis = v2[:r]
        mass = float(w[in_subspace(pts, basis, 1e-7)].sum())
        if mass > r / n + 1e-12:
            return basis, mass
    return None


def isotropic_position(cloud: WeightedPointCloud, tol: float = 1e-9,
                       max_iter: int = 500) -> PositionResult:
    """Find T with M(R_* T_* cloud) = Id/n by a Tyler-type fixed point.

    Each step multiplies T by the inverse square root of n * M(R_* T_* cloud)
    and rescales to unit Hilbert-Schmidt norm; the step power is halved
    whenever the residual would increase. Raises :class:`PositioningError`
    when some proper subspace carries more than its share dim/n of mass.
    """
    if not cloud.is_proper():
        raise NonProperMeasureError("positioning needs a proper measure")
    n = cloud.dim
    heavy = _heavy_subspace(cloud)
    if heavy is not None:
        basis, mass = heavy
        raise PositioningError(
            f"a {basis.shape[0]}-dimensional subspace carries mass {mass:.12g} "
            f"> {basis.shape[0]}/{n}; isotropic position is unreachable",
            basis, mass, n)
    tmap = np.eye(n) / math.sqrt(n)
    resid = isotropy_residual(cloud, tmap)
    trace = [(0, resid)]
    power = 1.0
    it = 0
    while resid > tol and it < max_iter:
        it += 1
        m = n * second_moment(radial_project(pushforward(cloud, tmap)))
        while True:
            cand = _inv_sqrt_power(m, power) @ tmap
            cand /= np.linalg.norm(cand)
            r = isotropy_residual(cloud, cand)
            if r <= resid or power < 1e-3:
                break
            power *= 0.5
        tmap, resid = cand, r
        trace.append((it, resid))
        if np.linalg.cond(tmap) > 1e12:
            break
    if resid > tol:
        found = _subspace_from_map(cloud, tmap)
        if found is not None:
            basis, mass = found
            raise PositioningError(
                f"iteration degenerates: a {basis.shape[0]}-dimensional subspace carries "
                f"mass {mass:.12g} > {basis.shape[0]}/{n}", basis, mass, n)
    return PositionResult(tmap, resid, resid <= tol, it, tuple(trace))


# ---------------------------------------------------------------------------
# stratified splitting and the moment-bounded position
# ---------------------------------------------------------------------------

def stratified_split(cloud: WeightedPointCloud, basis):
    """Split along E: returns (mass(E), cloud conditioned on E,
    off-E atoms projected to the orthogonal complement and renormalized)."""
    q = orthonormal_basis(basis)
    inside = in_subspace(cloud.points, q) & (cloud.weights > 0)
    lam = float(cloud.weights[inside].sum())
    outside = (~inside) & (cloud.weights > 0)
    if lam <= 0 or not outside.any():
        raise MeasureError(f"subspace mass {lam:.12g} must lie strictly between 0 and 1")
    on_e = WeightedPointCloud(cloud.points[inside], cloud.weights[inside] / lam)
    off = cloud.points[outside]
    off = off - (off @ q.T) @ q
    w_off = cloud.weights[outside]
    return lam, on_e, WeightedPointCloud(off, w_off / w_off.sum())


def _complement(q: np.ndarray) -> np.ndarray:
    n = q.shape[1]
    _, _, vt = np.linalg.svd(q, full_matrices=True)
    return vt[q.shape[0]:] if q.shape[0] < n else np.zeros((0, n))


@dataclass(frozen=True)
class MomentPosition:
    matrix: np.ndarray
    sup: float
    alpha: float
    target: float
    splits: int


def moment_position(cloud: WeightedPointCloud, epsilon: float = 0.05, max_dim: int = 3,
                    tol: float = 1e-9, max_iter: int = 500) -> MomentPosition:
    """Linear map T whose pushforward has directional second moments <= alpha + epsilon.

    alpha is the decency level of the cloud. Uses isotropic position when it
    exists; otherwise splits off a heaviest subspace, positions both parts
    recursively and merges them through x -> x - delta * Proj_E x with delta
    pushed towards 1 until the bound holds.
    """
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    alpha = decency_alpha(cloud, max_dim=max_dim).alpha
    tmap, splits = _moment_map(cloud, epsilon, max_dim, tol, max_iter)
    sup = directional_sup(cloud, tmap)
    return MomentPosition(tmap, sup, alpha, alpha + epsilon, splits)


def _moment_map(cloud, epsilon, max_dim, tol, max_iter):
    n = cloud.dim
    if n == 1:
        return np.eye(1), 0
    # reduce to the span of the support first
    keep = cloud.weights > 0
    _, sv, vt = np.linalg.svd(cloud.points[keep], full_matrices=False)
    rank = int(np.sum(sv > 1e-12 * sv[0]))
    if rank < n:
        q = vt[:rank]
        sub = WeightedPointCloud(cloud.points @ q.T, cloud.weights)
        pos_map, k = _moment_map(sub, epsilon, max_dim, tol, max_iter)
        return q.T @ pos_map @ q, k
    try:
        res = isotropic_position(cloud, tol=tol, max_iter=max_iter)
        if res.converged or directional_sup(cloud, res.matrix) <= 1.0 / n + epsilon:
            return res.matrix, 0
    except PositioningError:
        pass
    report = decency_alpha(cloud, max_dim=max_dim)
    q = report.witness
    if q.shape[0] >= n:
        # no heavier proper subspace was found; fall back to the best iterate
        return isotropic_position(cloud, tol=tol, max_iter=max_iter).matrix, 0
    lam, on_e, off_e = stratified_split(cloud, q)
    qp = _complement(q)
    map_e, k1 = _moment_map(WeightedPointCloud(on_e.points @ q.T, on_e.weights),
                          epsilon / 3, max_dim, tol, max_iter)
    map_perp, k2 = _moment_map(WeightedPointCloud(off_e.points @ qp.T, off_e.weights),
                          epsilon / 3, max_dim, tol, max_iter)
    pos_map = q.T @ map_e @ q + qp.T @ map_perp @ qp
    proj_e = q.T @ q
    limit = max(lam * directional_sup(on_e, q.T @ map_e @ q),
                (1 - lam) * directional_sup(off_e, qp.T @ map_perp @ qp))
    target = limit + epsilon / 2
    best = None
    for k in range(1, 16):
        delta = 1.0 - 10.0 ** (-k)
        tmap = pos_map @ (np.eye(n) - delta * proj_e)
        sup = directional_sup(cloud, tmap)
        if best is None or sup < best[1]:
            best = (tmap, sup)
        if sup <= target:
            break
    tmap = best[0]
    return tmap / np.linalg.norm(tmap), 1 + k1 + k2
