"""Discrete probability measures on R^n and the elementary operations on them.

Every measure here is a finite list of atoms with nonnegative weights summing
to one. Objects are immutable: arrays are copied on construction and flagged
read-only, so they can be shared freely.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

WEIGHT_SUM_TOL = 1e-12
UNIT_NORM_TOL = 1e-10
ORIGIN_TOL = 1e-14


class MeasureError(ValueError):
    """Invalid measure data or an operation undefined for the given input."""


class DimensionMismatchError(MeasureError):
    pass


class NonProperMeasureError(MeasureError):
    """Positive mass sits at the origin, so radial projection is undefined."""


class EmptyShellError(MeasureError):
    pass


class CloudFormatError(MeasureError):
    """Malformed point-cloud file; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class WeightedPointCloud:
    """Finitely supported probability measure on R^n.

    Duplicate points are allowed and are never merged implicitly; use
    :func:`canonicalize` for that.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1) if pts.size else pts.reshape(0, 1)
        if pts.ndim != 2 or pts.shape[1] < 1:
            raise MeasureError("points must be a 2-D array of shape (N, dim)")
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if w.shape[0] != pts.shape[0]:
            raise MeasureError(f"{pts.shape[0]} points but {w.shape[0]} weights")
        if pts.shape[0] == 0:
            raise MeasureError("a probability measure needs at least one atom")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(w))):
            raise MeasureError("points and weights must be finite")
        if np.any(w < 0):
            raise MeasureError("weights must be nonnegative")
        total = float(w.sum())
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise MeasureError(f"weights sum to {total!r}, expected 1")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "weights", _frozen(w))
        self._check_extra()

    def _check_extra(self):
        pass

    @classmethod
    def uniform(cls, points):
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        n = pts.shape[0]
        return cls(pts, np.full(n, 1.0 / n) if n else np.zeros(0))

    @classmethod
    def from_unnormalized(cls, points, weights):
        w = np.asarray(weights, dtype=float)
        total = w.sum()
        if not total > 0:
            raise MeasureError("total weight must be positive")
        return cls(points, w / total)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def __len__(self):
        return self.size

    @cached_property
    def radii(self) -> np.ndarray:
        r = np.linalg.norm(self.points, axis=1)
        r.setflags(write=False)
        return r

    def is_proper(self) -> bool:
        return not np.any((self.radii < ORIGIN_TOL) & (self.weights > 0))

    def scaled(self, factor: float) -> "WeightedPointCloud":
        return WeightedPointCloud(self.points * factor, self.weights)

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim}, atoms={self.size})"


@dataclass(frozen=True, eq=False, repr=False)
class SphericalMeasure(WeightedPointCloud):
    """Discrete probability measure supported on the unit sphere S^{d-1}."""

    def _check_extra(self):
        norms = np.linalg.norm(self.points, axis=1)
        bad = np.abs(norms - 1.0) > UNIT_NORM_TOL
        if np.any(bad):
            i = int(np.argmax(bad))
            raise MeasureError(f"atom {i} has norm {norms[i]!r}, not on the unit sphere")


@dataclass(frozen=True)
class RadialInterval:
    """An interval J inside (0, inf); the shell S(J) = {x : |x| in J}."""

    lower: float
    upper: float
    lower_closed: bool = True
    upper_closed: bool = True

    def __post_init__(self):
        lo, hi = float(self.lower), float(self.upper)
        if lo < 0 or math.isnan(lo) or math.isnan(hi):
            raise MeasureError("interval endpoints must be nonnegative numbers")
        if lo > hi or (lo == hi and not (self.lower_closed and self.upper_closed)):
            raise MeasureError(f"empty interval ({lo}, {hi})")
        if lo == 0 and self.lower_closed:
            raise MeasureError("shell intervals lie in (0, inf); lower end 0 must be open")
        if math.isinf(hi) and self.upper_closed:
            object.__setattr__(self, "upper_closed", False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def closed(cls, lo, hi):
        return cls(lo, hi, True, True)

    @classmethod
    def everything(cls):
        return cls(0.0, math.inf, False, False)

    def contains(self, r):
        r = np.asarray(r, dtype=float)
        above = r >= self.lower if self.lower_closed else r > self.lower
        below = r <= self.upper if self.upper_closed else r < self.upper
        return above & below

    def __contains__(self, r):
        return bool(self.contains(r))

    def __str__(self):
        left = "[" if self.lower_closed else "("
        right = "]" if self.upper_closed else ")"
        return f"{left}{self.lower:.12g}, {self.upper:.12g}{right}"


def as_linear_map(matrix, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Validate a dense real matrix used as a linear map R^cols -> R^rows."""
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or min(m.shape) < 1:
        raise MeasureError("a linear map must be a nonempty 2-D matrix")
    if not np.all(np.isfinite(m)):
        raise MeasureError("linear map entries must be finite")
    if rows is not None and m.shape[0] != rows:
        raise DimensionMismatchError(f"map has {m.shape[0]} rows, expected {rows}")
    if cols is not None and m.shape[1] != cols:
        raise DimensionMismatchError(f"map has {m.shape[1]} columns, expected {cols}")
    return m


def pushforward(cloud: WeightedPointCloud, matrix) -> WeightedPointCloud:
    """Image measure T_*(cloud) under the linear map x -> matrix @ x."""
    t = as_linear_map(matrix)
    if t.shape[1] != cloud.dim:
        raise DimensionMismatchError(
            f"map expects dimension {t.shape[1]}, cloud has dimension {cloud.dim}")
    return WeightedPointCloud(cloud.points @ t.T, cloud.weights)


def radial_project(cloud: WeightedPointCloud) -> SphericalMeasure:
    """Push the cloud forward under x -> x/|x|.

    Zero-weight atoms at the origin are dropped; positive weight there raises
    :class:`NonProperMeasureError`.
    """
    r = cloud.radii
    at_origin = r < ORIGIN_TOL
    if np.any(at_origin & (cloud.weights > 0)):
        raise NonProperMeasureError("measure has positive mass at the origin (not proper)")
    keep = ~at_origin
    pts = cloud.points[keep] / r[keep, None]
    # renormalize the rows exactly so the unit-norm check never trips on rounding
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return SphericalMeasure(pts, cloud.weights[keep])


def condition_on_shell(cloud: WeightedPointCloud, interval: RadialInterval):
    """Return ``(cloud restricted to S(J) and renormalized, mass of S(J))``."""
    inside = interval.contains(cloud.radii)
    mass = float(cloud.weights[inside].sum())
    if mass <= 0:
        raise EmptyShellError(f"shell {interval} carries no mass")
    return WeightedPointCloud(cloud.points[inside], cloud.weights[inside] / mass), mass


def restrict(cloud: WeightedPointCloud, mask) -> tuple[WeightedPointCloud, float]:
    """Condition on an arbitrary atom subset given as a boolean mask."""
    mask = np.asarray(mask, dtype=bool)
    mass = float(cloud.weights[mask].sum())
    if mass <= 0:
        raise EmptyShellError("conditioning set carries no mass")
    cls = type(cloud)
    return cls(cloud.points[mask], cloud.weights[mask] / mass), mass


def _merged_support(*clouds: WeightedPointCloud):
    dims = {c.dim for c in clouds}
    if len(dims) != 1:
        raise DimensionMismatchError(f"dimension mismatch: {sorted(dims)}")
    stacked = np.vstack([c.points for c in clouds])
    # +0.0 maps -0.0 to 0.0 so that exact coordinate matching ignores the sign of zero
    uniq, inverse = np.unique(stacked + 0.0, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    out = []
    start = 0
    for c in clouds:
        w = np.zeros(len(uniq))
        np.add.at(w, inverse[start:start + c.size], c.weights)
        out.append(w)
        start += c.size
    return uniq, out


def total_variation(a: WeightedPointCloud, b: WeightedPointCloud) -> float:
    """sup_A |a(A) - b(A)|, with atoms identified by exact coordinates."""
    _, (wa, wb) = _merged_support(a, b)
    return float(np.clip(np.maximum(wa - wb, 0.0).sum(), 0.0, 1.0))


def canonicalize(cloud: WeightedPointCloud) -> WeightedPointCloud:
    """Sort atoms lexicographically and merge exact duplicates."""
    pts, (w,) = _merged_support(cloud)
    cls = type(cloud)
    return cls(pts, w / w.sum())


def mixture(components: Iterable[tuple[float, WeightedPointCloud]]) -> WeightedPointCloud:
    """Concatenate atoms, scaling each component's weights by its mixing weight."""
    comps = list(components)
    if not comps:
        raise MeasureError("mixture needs at least one component")
    lam = np.array([float(w) for w, _ in comps])
    if np.any(lam < 0):
        raise MeasureError("mixture weights must be nonnegative")
    if abs(lam.sum() - 1.0) > WEIGHT_SUM_TOL:
        raise MeasureError(f"mixture weights sum to {lam.sum()!r}, expected 1")
    dims = {c.dim for _, c in comps}
    if len(dims) != 1:
        raise DimensionMismatchError(f"mixture components have dimensions {sorted(dims)}")
    pts = np.vstack([c.points for _, c in comps])
    w = np.concatenate([l * c.weights for l, (_, c) in zip(lam, comps)])
    w = w / w.sum()
    spherical = all(isinstance(c, SphericalMeasure) for _, c in comps)
    return (SphericalMeasure if spherical else WeightedPointCloud)(pts, w)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def _normalize_loaded(points, weights, where: str) -> WeightedPointCloud:
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise CloudFormatError(f"{where}: negative weight")
    total = float(w.sum())
    if not total > 0 or abs(total - 1.0) > 0.01:
        raise CloudFormatError(f"{where}: weights sum to {total:.12g}, not within 1% of 1")
    return WeightedPointCloud(points, w / total)


def read_csv_cloud(path) -> WeightedPointCloud:
    """Read ``x1,...,xn,weight`` rows (with header)."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CloudFormatError("empty file", line=1) from None
        header = [h.strip() for h in header]
        if len(header) < 2 or header[-1].lower() != "weight":
            raise CloudFormatError("header must be x1,...,xn,weight", line=1)
        ncol = len(header)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != ncol:
                raise CloudFormatError(f"expected {ncol} fields, found {len(row)}", line=lineno)
            try:
                vals = [float(c) for c in row]
            except ValueError as exc:
                raise CloudFormatError(f"non-numeric field ({exc})", line=lineno) from None
            if not all(math.isfinite(v) for v in vals):
                raise CloudFormatError("non-finite value", line=lineno)
            rows.append(vals)
    if not rows:
        raise CloudFormatError("no atoms in file", line=2)
    arr = np.array(rows)
    return _normalize_loaded(arr[:, :-1], arr[:, -1], str(path))


def read_json_cloud(path) -> WeightedPointCloud:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CloudFormatError(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
    try:
        dim = int(doc["dim"])
        points = np.asarray(doc["points"], dtype=float)
        weights = np.asarray(doc["weights"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise CloudFormatError(f"expected keys dim, points, weights ({exc})") from None
    if points.ndim != 2 or points.shape[1] != dim:
        raise CloudFormatError(f"points must be a list of length-{dim} lists")
    if weights.shape != (points.shape[0],):
        raise CloudFormatError("need exactly one weight per point")
    return _normalize_loaded(points, weights, str(path))


def load_cloud(path) -> WeightedPointCloud:
    path = Path(path)
    if path.suffix.lower() == ".json":
        return read_json_cloud(path)
    return read_csv_cloud(path)


def save_cloud(cloud: WeightedPointCloud, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".json":
        doc = {"dim": cloud.dim, "points": cloud.points.tolist(),
               "weights": cloud.weights.tolist()}
        path.write_text(json.dumps(doc))
        return
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(cloud.dim)] + ["weight"])
        for p, wt in zip(cloud.points, cloud.weights):
            w.writerow([repr(float(v)) for v in p] + [repr(float(wt))])


def cloud_from_rows(rows: Sequence[Sequence[float]], weights=None) -> WeightedPointCloud:
    if weights is None:
        return WeightedPointCloud.uniform(rows)
    return WeightedPointCloud(rows, weights)
