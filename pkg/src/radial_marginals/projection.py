"""Gaussian projections, nearly orthogonal tuples and the end-to-end pipeline.

The pipeline positions a cloud, projects it with a seeded Gaussian matrix and
certifies the resulting low-dimensional marginal.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .measures import (MeasureError, WeightedPointCloud, as_linear_map, pushforward,
                       radial_project, total_variation)
from .positioning import (PositioningError, decency_alpha, directional_sup,
                          isotropic_position, moment_position)
from .radiality import RadialityReport, ReferenceParams, radiality_epsilon

DEGENERATE_TOL = 1e-12
DEPENDENCE_TOL = 1e-12


class DegenerateProjectionError(MeasureError):
    """A positive-weight atom landed (numerically) on the origin."""


class DependentTupleError(MeasureError):
    """Gram-Schmidt hit a zero diagonal coefficient."""


def _seed_list(seed):
    if isinstance(seed, (tuple, list)):
        return [int(s) for s in seed]
    return [int(seed)]


def gaussian_matrix(d: int, n: int, seed=0) -> np.ndarray:
    """d x n matrix of independent standard normals from a seeded generator."""
    if not 1 <= d <= n:
        raise ValueError(f"need 1 <= d <= n, got d={d}, n={n}")
    return np.random.default_rng(_seed_list(seed)).standard_normal((d, n))


# ---------------------------------------------------------------------------
# orthogonal tuples
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OrthogonalTuple:
    vectors: np.ndarray
    witness_basis: np.ndarray
    coefficients: np.ndarray    # lower triangular, v_i = sum_j a_ij w_j
    tau: float

    @property
    def length(self):
        return self.vectors.shape[0]

    def reconstruction_error(self) -> float:
        return float(np.abs(self.coefficients @ self.witness_basis - self.vectors).max())


def orthogonality_tau(vectors) -> OrthogonalTuple:
    """Gram-Schmidt in the given order (with one re-orthogonalization pass).

    tau is max over j < i of |a_ij| / |a_ii|.
    """
    v = np.atleast_2d(np.asarray(vectors, dtype=float))
    ell, n = v.shape
    norms = np.linalg.norm(v, axis=1)
    if np.any(norms == 0):
        raise MeasureError("tuple vectors must be nonzero")
    w = np.zeros((ell, n))
    a = np.zeros((ell, ell))
    for i in range(ell):
        r = v[i].copy()
        coef = np.zeros(i)
        for _ in range(2):
            c = w[:i] @ r
            r -= c @ w[:i]
            coef += c
        rn = np.linalg.norm(r)
        if rn < DEPENDENCE_TOL * norms[i]:
            raise DependentTupleError(f"vector {i} is dependent on the previous ones")
        a[i, :i] = coef
        a[i, i] = rn
        w[i] = r / rn
    off = np.abs(np.tril(a, -1)) / np.diag(a)[:, None]
    tau = float(off.max()) if ell > 1 else 0.0
    return OrthogonalTuple(v, w, a, tau)


# ---------------------------------------------------------------------------
# greedy decomposition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MixtureDecomposition:
    """Cloud written as a mixture of uniform measures on nearly orthogonal tuples.

    ``weights`` are normalized over the tuples; ``captured`` is the fraction of
    the original mass they account for. ``residual_tv`` is the exact total
    variation between the cloud and the normalized mixture.
    """

    weights: np.ndarray
    tuples: tuple
    indices: np.ndarray         # (count, ell) atom indices of each tuple
    captured: float
    residual_mass: float
    residual_tv: float
    success: bool
    attempts: int
    params: dict

    def __len__(self):
        return len(self.tuples)

    def mixture_measure(self, cloud: WeightedPointCloud) -> WeightedPointCloud:
        ell = self.indices.shape[1]
        w = np.zeros(cloud.size)
        np.add.at(w, self.indices.reshape(-1), np.repeat(self.weights / ell, ell))
        keep = w > 0
        return WeightedPointCloud(cloud.points[keep], w[keep] / w[keep].sum())

    def summary(self) -> dict:
        return {"tuples": len(self.tuples), "residual_tv": self.residual_tv,
                "residual_mass": self.residual_mass, "captured": self.captured,
                "success": self.success, "attempts": self.attempts,
                "max_tau": max((t.tau for t in self.tuples), default=0.0),
                **self.params}


def _default_budget(ell, min_weight):
    expected = math.ceil(1.0 / (ell * min_weight))
    return 200 * min(expected, 10 ** 5)


def greedy_decomposition(cloud: WeightedPointCloud, ell: int, tau_threshold: float,
                         epsilon: float, seed=0, moment_bound: float | None = None,
                         budget: int | None = None) -> MixtureDecomposition:
    """Peel nearly orthogonal ell-tuples off the cloud by rejection sampling.

    Each draw picks ell distinct atoms with probability proportional to their
    remaining weight. An accepted tuple removes its smallest remaining weight
    from each of its atoms. Stops once the remaining mass is at most epsilon
    or the attempt budget runs out (``success`` is then false).
    """
    if ell < 1:
        raise ValueError("ell must be at least 1")
    if tau_threshold < 0 or not 0 <= epsilon < 1:
        raise ValueError("need tau_threshold >= 0 and 0 <= epsilon < 1")
    if moment_bound is not None:
        sup = directional_sup(cloud)
        if sup > moment_bound:
            raise MeasureError(
                f"directional second-moment sup {sup:.6g} exceeds the bound {moment_bound:.6g}")
    rng = np.random.default_rng(_seed_list(seed))
    pts = cloud.points
    resid = cloud.weights.astype(float).copy()
    pos = resid[resid > 0]
    if budget is None:
        budget = _default_budget(ell, pos.min())
    tuples, idx, raw = [], [], []
    attempts = 0
    # the tiny margin keeps rounding in the running sum from stopping one tuple short
    while resid.sum() > epsilon * (1 - 1e-9) and attempts < budget:
        live = np.flatnonzero(resid > 0)
        if len(live) < ell:
            break
        attempts += 1
        p = resid[live] / resid[live].sum()
        pick = live[rng.choice(len(live), size=ell, replace=False, p=p)]
        try:
            tup = orthogonality_tau(pts[pick])
        except DependentTupleError:
            continue
        if tup.tau > tau_threshold:
            continue
        t = resid[pick].min()
        resid[pick] -= t
        tuples.append(tup)
        idx.append(pick)
        raw.append(ell * t)
    raw = np.array(raw)
    residual_mass = float(resid.sum())
    indices = np.array(idx, dtype=int).reshape(-1, ell)
    if len(raw):
        weights = raw / raw.sum()
        dec = MixtureDecomposition(weights, tuple(tuples), indices, float(raw.sum()),
                                   residual_mass, 0.0, False, attempts, {})
        tv = total_variation(cloud, dec.mixture_measure(cloud))
    else:
        weights = np.zeros(0)
        tv = 1.0
    params = {"ell": ell, "tau_threshold": tau_threshold, "epsilon": epsilon,
              "budget": budget}
    return MixtureDecomposition(weights, tuple(tuples), indices, float(raw.sum()),
                                residual_mass, float(tv), residual_mass <= epsilon + 1e-12,
                                attempts, params)


# ---------------------------------------------------------------------------
# Gaussian total variation
# ---------------------------------------------------------------------------

def gaussian_tv_bound(A, B, C_const: float) -> float:
    """C_const * k * ||B A^{-1} - Id||_op for k x k matrices."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape != B.shape or A.shape[0] != A.shape[1]:
        raise ValueError("A and B must be square of the same size")
    k = A.shape[0]
    if np.linalg.matrix_rank(A) < k:
        raise np.linalg.LinAlgError("A is singular")
    # (B - A) A^{-1} is B A^{-1} - Id without the rounding of subtracting Id
    diff = (B - A) @ np.linalg.inv(A)
    return float(C_const * k * np.linalg.norm(diff, 2))


def gaussian_tv_exact_1d(sigma1: float, sigma2: float) -> float:
    """Total variation between centered normals with standard deviations sigma1, sigma2."""
    s1, s2 = float(sigma1), float(sigma2)
    if s1 <= 0 or s2 <= 0:
        raise ValueError("standard deviations must be positive")
    if s1 == s2:
        return 0.0
    lo, hi = min(s1, s2), max(s1, s2)
    # the densities cross at +-x
    x = lo * hi * math.sqrt(2.0 * math.log(hi / lo) / (hi * hi - lo * lo))
    return float(2.0 * (norm.cdf(x / lo) - norm.cdf(x / hi)))


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PipelineResult:
    position_map: np.ndarray
    projection: np.ndarray
    composite: np.ndarray
    marginal: WeightedPointCloud
    report: RadialityReport
    seed: tuple
    diagnostics: dict = field(default_factory=dict)

    @property
    def epsilon_star(self) -> float:
        return self.report.epsilon_star

    def to_dict(self) -> dict:
        return {"epsilon_star": self.report.epsilon_star, "seed": list(self.seed),
                "report": self.report.to_dict(),
                "position_map": self.position_map.tolist(),
                "projection": self.projection.tolist(),
                "composite": self.composite.tolist(),
                "diagnostics": self.diagnostics}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _check_proper_image(cloud: WeightedPointCloud, marginal: WeightedPointCloud):
    r = marginal.radii
    bad = (r <= DEGENERATE_TOL) & (marginal.weights > 0)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise DegenerateProjectionError(
            f"atom {i} maps to the origin; this projection is degenerate, try another seed")


def project_and_certify(cloud: WeightedPointCloud, d: int, seed=0,
                        ref_params: ReferenceParams | None = None,
                        gamma=None) -> PipelineResult:
    """Project with a seeded Gaussian matrix and certify the marginal.

    ``gamma="identity"`` (with d equal to the ambient dimension) or an explicit
    matrix overrides the random projection.
    """
    n = cloud.dim
    if isinstance(gamma, str):
        if gamma != "identity":
            raise ValueError(f"unknown gamma override {gamma!r}")
        if d != n:
            raise ValueError("the identity override needs d equal to the ambient dimension")
        gamma_mat = np.eye(n)
    elif gamma is not None:
        gamma_mat = as_linear_map(gamma, rows=d, cols=n)
    else:
        gamma_mat = gaussian_matrix(d, n, seed)
    marginal = pushforward(cloud, gamma_mat)
    _check_proper_image(cloud, marginal)
    report = radiality_epsilon(marginal, ref_params)
    return PipelineResult(np.eye(n), gamma_mat, gamma_mat, marginal, report,
                          tuple(_seed_list(seed)), {})


def full_pipeline(cloud: WeightedPointCloud, d: int, target_epsilon: float = 0.25,
                  seed=0, ref_params: ReferenceParams | None = None, retries: int = 5,
                  allow_split: bool = False, decency_max_dim: int = 1,
                  position_tol: float = 1e-9, max_iter: int = 500,
                  gamma=None) -> PipelineResult:
    """Position, project and certify; retries projection seeds (seed, t).

    Returns the best certificate over at most ``retries`` projections, stopping
    early once ``target_epsilon`` is reached. Positioning failures propagate
    unless ``allow_split`` selects the moment-bounded position instead.
    """
    if retries < 1:
        raise ValueError("retries must be at least 1")
    n = cloud.dim
    if not 1 <= d <= n:
        raise ValueError(f"need 1 <= d <= n, got d={d}, n={n}")
    diag = {}
    dec = decency_alpha(cloud, max_dim=decency_max_dim)
    diag["decency_alpha"] = dec.alpha
    diag["decency_exhaustive"] = dec.exhaustive
    try:
        pos = isotropic_position(cloud, tol=position_tol, max_iter=max_iter)
        pos_map = pos.matrix
        diag.update(position_residual=pos.residual, position_converged=pos.converged,
                    position_iterations=pos.iterations, position_mode="isotropic")
    except PositioningError as exc:
        if not allow_split:
            raise
        mp = moment_position(cloud)
        pos_map = mp.matrix
        diag.update(position_mode="split", position_error=str(exc),
                    moment_target=mp.target, position_converged=False)
    diag["directional_sup"] = directional_sup(cloud, pos_map)
    best = None
    tried = []
    for t in range(retries):
        s = _seed_list(seed) + [t]
        if gamma is not None:
            if isinstance(gamma, str):
                gamma_mat = np.eye(n)
            else:
                gamma_mat = as_linear_map(gamma, rows=d, cols=n)
        else:
            gamma_mat = gaussian_matrix(d, n, s)
        tmap = gamma_mat @ pos_map
        marginal = pushforward(cloud, tmap)
        try:
            _check_proper_image(cloud, marginal)
        except DegenerateProjectionError:
            tried.append({"seed": s, "degenerate": True})
            continue
        report = radiality_epsilon(marginal, ref_params)
        tried.append({"seed": s, "epsilon_star": report.epsilon_star})
        if best is None or report.epsilon_star < best.report.epsilon_star:
            best = PipelineResult(pos_map, gamma_mat, tmap, marginal, report, tuple(s), {})
        if report.epsilon_star <= target_epsilon or gamma is not None:
            break
    if best is None:
        raise DegenerateProjectionError("every projection seed was degenerate")
    diag["attempts"] = tried
    diag["target_epsilon"] = target_epsilon
    diag["success"] = best.report.epsilon_star <= target_epsilon
    return PipelineResult(best.position_map, best.projection, best.composite,
                          best.marginal, best.report, best.seed, diag)
