"""Shell-wise certification of near-radiality, plus a one-dimensional tail check.

A cloud is eps-radial when every spherical shell holding mass at least eps
radially projects to within W1-distance eps of the uniform measure. The
smallest such eps over a finite shell family is

    eps* = max over shells of min(mass, w1),

so no search over eps is needed once the shell values are known.

Shells are unions of consecutive radial *cells*. With few distinct radii each
radius is its own cell and the family is exact. Otherwise cells are mass
quantiles that never separate equal radii, and eps* is exact over that coarser
family.

All shells in one repeat are compared against one shared reference sample.
W1 against a fixed target is convex under mixtures, and a shell is the mixture
of any split of it, so

    w1(i, j) <= (m(i, k) w1(i, k) + m(k, j) w1(k, j)) / m(i, j).

Upper bounds propagated this way let most large shells be skipped without
changing the result.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from .measures import (MeasureError, NonProperMeasureError,
                       RadialInterval, SphericalMeasure, WeightedPointCloud)
from .transport import UniformReference, geodesic_cost, w1_distance, w1_from_cost

MASS_TOL = 1e-12
# radii within this relative gap of their neighbour form one level, so that
# rounding in |x| cannot split or merge shells when the cloud is rescaled
RADIUS_TOL = 1e-12
# largest atoms x reference-atoms product for which shell costs are cached (~200 MB)
COST_CACHE_ENTRIES = 25_000_000


@dataclass(frozen=True)
class ReferenceParams:
    """How the uniform spherical measure is sampled during certification.

    ``size=None`` picks max(2000, 10 * atom count), capped at ``lp_cap`` when
    the sphere has dimension >= 2 (network simplex) and at ``fast_cap`` on the
    circle and on S^0 where closed forms make large references cheap.
    """

    size: int | None = None
    repeats: int = 3
    seed: int = 0
    max_cells: int = 32
    lp_cap: int = 5000
    fast_cap: int = 100_000
    prune: bool = True

    def __post_init__(self):
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")
        if self.size is not None and self.size < 1:
            raise ValueError("reference size must be positive")
        if self.max_cells < 1:
            raise ValueError("max_cells must be positive")

    def resolve_size(self, atoms: int, dim: int) -> int:
        if self.size is not None:
            return int(self.size)
        m = max(2000, 10 * atoms)
        return min(m, self.fast_cap if dim <= 2 else self.lp_cap)


@dataclass(frozen=True)
class ShellRecord:
    interval: RadialInterval
    mass: float
    w1: float
    spread: float
    w1_max: float

    def to_dict(self):
        return {"lo": self.interval.lower, "hi": self.interval.upper,
                "mass": self.mass, "w1": self.w1, "spread": self.spread,
                "w1_max": self.w1_max}

    @classmethod
    def from_dict(cls, d):
        return cls(RadialInterval.closed(d["lo"], d["hi"]), d["mass"], d["w1"],
                   d["spread"], d.get("w1_max", d["w1"] + d["spread"]))


@dataclass(frozen=True)
class RadialityReport:
    """Certificate for the smallest eps at which the cloud is eps-radial.

    Valid at the stated reference resolution: sample size, repeats and seed
    are recorded in ``params``. ``shells`` lists every evaluated shell; pruned
    shells are provably no worse than ``epsilon_star`` and are only counted.
    """

    epsilon_star: float
    shells: tuple
    worst_shell: int
    proper: bool
    params: dict

    @property
    def worst(self) -> ShellRecord:
        return self.shells[self.worst_shell]

    @property
    def spread(self) -> float:
        return self.worst.spread

    def to_dict(self):
        return {"epsilon_star": self.epsilon_star,
                "shells": [s.to_dict() for s in self.shells],
                "worst_shell": self.worst_shell, "proper": self.proper,
                "params": dict(self.params)}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d):
        return cls(d["epsilon_star"], tuple(ShellRecord.from_dict(s) for s in d["shells"]),
                   d["worst_shell"], d["proper"], dict(d["params"]))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def __eq__(self, other):
        return isinstance(other, RadialityReport) and self.to_dict() == other.to_dict()

    def table(self) -> str:
        lines = [f"epsilon_star = {self.epsilon_star:.12g}  (worst shell #{self.worst_shell})",
                 f"{'#':>4} {'lo':>14} {'hi':>14} {'mass':>14} {'w1':>14} {'spread':>14}"]
        for k, s in enumerate(self.shells):
            lines.append(f"{k:>4} {s.interval.lower:>14.8g} {s.interval.upper:>14.8g} "
                         f"{s.mass:>14.8g} {s.w1:>14.8g} {s.spread:>14.8g}")
        p = self.params
        lines.append(f"reference M={p['reference_size']} repeats={p['repeats']} "
                     f"seed={p['seed']} cells={p['cells']} exact_family={p['exact_family']}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# shells
# ---------------------------------------------------------------------------

def _require_proper(cloud: WeightedPointCloud):
    if not cloud.is_proper():
        raise NonProperMeasureError(
            "eps-radial proper certification needs zero mass at the origin")


def _level_starts(r_sorted: np.ndarray) -> np.ndarray:
    """Indices where a new radius level begins in an ascending radius array."""
    gap = r_sorted[1:] > r_sorted[:-1] * (1.0 + RADIUS_TOL)
    return np.flatnonzero(np.concatenate([[True], gap]))


def _radius_levels(cloud: WeightedPointCloud):
    """Radius levels of positive-weight atoms, ascending: (lo, hi, mass)."""
    keep = cloud.weights > 0
    r = cloud.radii[keep]
    order = np.argsort(r, kind="mergesort")
    r, w = r[order], cloud.weights[keep][order]
    starts = _level_starts(r)
    ends = np.append(starts[1:], len(r)) - 1
    return r[starts], r[ends], np.add.reduceat(w, starts)


def shell_candidates(cloud: WeightedPointCloud, min_mass: float) -> list[RadialInterval]:
    """All closed intervals between distinct support radii with mass >= min_mass."""
    _require_proper(cloud)
    if not 0 < min_mass <= 1:
        raise ValueError("min_mass must lie in (0, 1]")
    lo, hi, mass = _radius_levels(cloud)
    cum = np.concatenate([[0.0], np.cumsum(mass)])
    out = []
    for i in range(len(lo)):
        for j in range(i, len(lo)):
            if cum[j + 1] - cum[i] >= min_mass - MASS_TOL:
                out.append(RadialInterval.closed(lo[i], hi[j]))
    return out


@dataclass
class _Cells:
    directions: np.ndarray      # radially projected atoms sorted by radius
    weights: np.ndarray
    bounds: np.ndarray          # atom index where each cell starts, plus end
    lo: np.ndarray              # smallest radius in each cell
    hi: np.ndarray
    mass: np.ndarray
    exact: bool

    @property
    def count(self):
        return len(self.mass)

    @cached_property
    def cum(self):
        return np.concatenate([[0.0], np.cumsum(self.mass)])

    def shell_mass(self, i, j):
        return float(self.mass[i:j].sum())

    def shell_measure(self, i, j) -> SphericalMeasure:
        a, b = self.bounds[i], self.bounds[j]
        w = self.weights[a:b]
        return SphericalMeasure(self.directions[a:b], w / w.sum())


def _build_cells(cloud: WeightedPointCloud, max_cells: int) -> _Cells:
    keep = cloud.weights > 0
    pts = cloud.points[keep]
    w = cloud.weights[keep]
    r = cloud.radii[keep]
    order = np.argsort(r, kind="mergesort")
    pts, w, r = pts[order], w[order], r[order]
    dirs = pts / r[:, None]
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    # level boundaries: positions where the radius changes
    level_start = _level_starts(r)
    n_levels = len(level_start)
    exact = n_levels <= max_cells
    if exact:
        starts = level_start
    else:
        cum_at_level_end = np.cumsum(w)[np.append(level_start[1:], len(r)) - 1]
        total = cum_at_level_end[-1]
        targets = total * np.arange(1, max_cells) / max_cells
        # a cell ends at the first level whose cumulative mass reaches the target
        ends = np.unique(np.searchsorted(cum_at_level_end, targets - MASS_TOL))
        ends = ends[ends < n_levels - 1]
        starts = np.concatenate([[0], level_start[ends + 1]])
    bounds = np.append(starts, len(r))
    mass = np.add.reduceat(w, starts)
    lo = r[starts]
    hi = r[bounds[1:] - 1]
    return _Cells(dirs, w, bounds, lo, hi, mass / mass.sum(), exact)


def _ordered_shells(k: int):
    for size in range(1, k + 1):
        for i in range(0, k - size + 1):
            yield i, i + size


class _ShellEvaluator:
    """Evaluates shells against shared references and propagates convex bounds."""

    def __init__(self, cells: _Cells, refs: list[SphericalMeasure], key: Callable):
        self.cells = cells
        self.refs = refs
        self.key = key
        k = cells.count
        self.ub = np.full((k + 1, k + 1), math.pi)
        self.values: dict[tuple[int, int], np.ndarray] = {}
        # shells are contiguous runs of radius-sorted atoms, so one cost matrix
        # per reference serves every shell as a row slice
        self.costs = None
        atoms = len(cells.weights)
        if cells.directions.shape[1] >= 3 and \
                atoms * sum(len(r.weights) for r in refs) <= COST_CACHE_ENTRIES:
            self.costs = [geodesic_cost(cells.directions, r.points) for r in refs]

    def bound_from_splits(self, i, j):
        if j - i > 1:
            cm = self.cells.cum
            ks = np.arange(i + 1, j)
            cand = ((cm[ks] - cm[i]) * self.ub[i, ks] + (cm[j] - cm[ks]) * self.ub[ks, j]) \
                / (cm[j] - cm[i])
            self.ub[i, j] = min(self.ub[i, j], float(cand.min()))
        return self.ub[i, j]

    def evaluate(self, i, j):
        if self.costs is None:
            shell = self.cells.shell_measure(i, j)
            vals = np.array([w1_distance(shell, ref) for ref in self.refs])
        else:
            a, b = self.cells.bounds[i], self.cells.bounds[j]
            w = self.cells.weights[a:b]
            vals = np.array([w1_from_cost(w, ref.weights, cost[a:b])
                             for ref, cost in zip(self.refs, self.costs)])
        self.values[(i, j)] = vals
        self.ub[i, j] = min(self.ub[i, j], float(self.key(vals)))
        return vals


def _references(dim: int, atoms: int, params: ReferenceParams):
    size = params.resolve_size(atoms, dim)
    base = UniformReference(dim, size, params.seed)
    return size, [base.repeat(i).measure for i in range(params.repeats)]


def _record(cells: _Cells, i, j, vals) -> ShellRecord:
    iv = RadialInterval.closed(cells.lo[i], cells.hi[j - 1])
    return ShellRecord(iv, cells.shell_mass(i, j), float(vals.mean()),
                       float(vals.max() - vals.min()), float(vals.max()))


def radiality_epsilon(cloud: WeightedPointCloud,
                      ref_params: ReferenceParams | None = None) -> RadialityReport:
    """Smallest eps for which the cloud is eps-radial over the shell family.

    Uses the mean over repeats as each shell's W1 estimate.
    """
    params = ref_params or ReferenceParams()
    _require_proper(cloud)
    cells = _build_cells(cloud, params.max_cells)
    size, refs = _references(cloud.dim, len(cells.weights), params)
    ev = _ShellEvaluator(cells, refs, np.mean)
    best = -1.0
    best_key = None
    pruned = 0
    for i, j in _ordered_shells(cells.count):
        mass = cells.shell_mass(i, j)
        if params.prune and j - i > 1:
            if ev.bound_from_splits(i, j) <= best or mass <= best:
                pruned += 1
                continue
        vals = ev.evaluate(i, j)
        score = min(mass, float(vals.mean()))
        if score > best:
            best, best_key = score, (i, j)
    records = []
    worst = 0
    for key in sorted(ev.values, key=lambda ij: (ij[1] - ij[0], ij[0])):
        if key == best_key:
            worst = len(records)
        records.append(_record(cells, *key, ev.values[key]))
    info = {"reference_size": size, "repeats": params.repeats, "seed": params.seed,
            "cells": cells.count, "exact_family": bool(cells.exact),
            "evaluated": len(records), "pruned": pruned,
            "convention": "closed intervals"}
    return RadialityReport(float(best), tuple(records), worst, True, info)


def is_eps_radial(cloud: WeightedPointCloud, epsilon: float,
                  ref_params: ReferenceParams | None = None):
    """Check the eps-radial condition at a given level.

    A shell violates when its mass is at least ``epsilon`` and the largest W1
    over the reference repeats (estimate plus its upward spread) exceeds
    ``epsilon``. Returns ``(True, None)`` or ``(False, first violating shell)``.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    params = ref_params or ReferenceParams()
    _require_proper(cloud)
    if epsilon > 1 + MASS_TOL:
        return True, None
    cells = _build_cells(cloud, params.max_cells)
    _, refs = _references(cloud.dim, len(cells.weights), params)
    ev = _ShellEvaluator(cells, refs, np.max)
    for i, j in _ordered_shells(cells.count):
        mass = cells.shell_mass(i, j)
        if params.prune:
            if j - i == 1:
                if mass < epsilon - MASS_TOL:
                    # evaluated anyway so that larger shells inherit bounds
                    ev.evaluate(i, j)
                    continue
            elif ev.bound_from_splits(i, j) <= epsilon or mass < epsilon - MASS_TOL:
                continue
        elif mass < epsilon - MASS_TOL:
            continue
        vals = ev.evaluate(i, j)
        if vals.max() > epsilon:
            return False, _record(cells, i, j, vals)
    return True, None


# ---------------------------------------------------------------------------
# tails
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TailReport:
    median: float
    direction: tuple
    grid: tuple                 # rows (t, mass_pos, mass_neg, threshold)
    passed: bool
    constants: dict
    witness_t: float | None = None
    median_interval: tuple = ()

    def to_dict(self):
        return {"median": self.median, "direction": list(self.direction),
                "grid": [list(g) for g in self.grid], "pass": self.passed,
                "constants": dict(self.constants), "witness_t": self.witness_t,
                "median_interval": list(self.median_interval)}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d):
        return cls(d["median"], tuple(d["direction"]), tuple(tuple(g) for g in d["grid"]),
                   d["pass"], dict(d["constants"]), d.get("witness_t"),
                   tuple(d.get("median_interval", ())))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def median_interval(values: np.ndarray, weights: np.ndarray) -> tuple[float, float]:
    """Interval of m with mass{v <= m} >= 1/2 and mass{v >= m} >= 1/2, for v >= 0."""
    order = np.argsort(values, kind="mergesort")
    v, w = values[order], weights[order]
    below = np.cumsum(w)
    above = below[-1] - np.concatenate([[0.0], below[:-1]])
    lo = v[int(np.argmax(below >= 0.5 - MASS_TOL))]
    hi = v[np.flatnonzero(above >= 0.5 - MASS_TOL)[-1]]
    return float(lo), float(hi)


def supergaussian_check(cloud: WeightedPointCloud, direction, c: float = 0.05,
                        C: float = 4.0, R: float = 2.0,
                        grid_step: float = 0.05) -> TailReport:
    """Check both tails of x -> <direction, x> against c exp(-C t^2) on [0, R]."""
    u = np.asarray(direction, dtype=float).reshape(-1)
    if u.shape[0] != cloud.dim:
        raise MeasureError("direction has the wrong dimension")
    if abs(np.linalg.norm(u) - 1.0) > 1e-10:
        raise MeasureError("direction must be a unit vector")
    if not (c > 0 and C > 0 and R > 0 and grid_step > 0):
        raise ValueError("c, C, R and grid_step must be positive")
    phi = cloud.points @ u
    w = cloud.weights
    lo, hi = median_interval(np.abs(phi), w)
    med = 0.5 * (lo + hi)
    if not med > 0:
        raise MeasureError("functional has no positive median (degenerate direction)")
    steps = int(math.floor(R / grid_step + 1e-9))
    ts = np.append(np.arange(steps + 1) * grid_step, R) if steps * grid_step < R - 1e-12 \
        else np.arange(steps + 1) * grid_step
    rows = []
    witness = None
    for t in ts:
        pos = float(w[phi >= t * med].sum())
        neg = float(w[phi <= -t * med].sum())
        thr = c * math.exp(-C * t * t)
        rows.append((float(t), pos, neg, thr))
        if witness is None and (pos < thr or neg < thr):
            witness = float(t)
    return TailReport(med, tuple(float(x) for x in u), tuple(rows), witness is None,
                      {"c": c, "C": C, "R": R, "grid_step": grid_step}, witness, (lo, hi))


def quantile_radius(cloud: WeightedPointCloud, p: float) -> float:
    """Smallest support radius r with mass{|x| <= r} >= p."""
    _require_proper(cloud)
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    _, hi, mass = _radius_levels(cloud)
    k = int(np.argmax(np.cumsum(mass) >= p - MASS_TOL))
    return float(hi[k])
