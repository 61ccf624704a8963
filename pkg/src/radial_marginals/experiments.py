"""Reproducible desk-scale experiments.

Every random draw comes from a generator seeded by a tuple that starts with
the experiment seed, so a bench is a pure function of its configuration.
"""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from .measures import SphericalMeasure, WeightedPointCloud
from .positioning import decency_alpha
from .projection import full_pipeline, project_and_certify
from .radiality import ReferenceParams, radiality_epsilon, supergaussian_check
from .transport import UniformReference, uniform_sphere_points, w1_distance


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    n: int = 20
    d: int = 3
    ell: int = 5
    sizes: tuple = (100, 400, 1600, 6400)
    seeds: tuple = tuple(range(20))
    ref_size: int = 5000
    repeats: int = 1
    cells: int = 32
    out_dir: str | None = None
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.sizes or min(self.sizes) < 1:
            raise ValueError("sample sizes must be positive")
        if not self.seeds:
            raise ValueError("seed list must be nonempty")
        if min(self.n, self.d, self.ell, self.ref_size, self.repeats, self.cells) < 1:
            raise ValueError("dimensions, reference size and repeats must be positive")
        if self.out_dir is not None:
            out = Path(self.out_dir)
            out.mkdir(parents=True, exist_ok=True)
            if not os.access(out, os.W_OK):
                raise ValueError(f"output directory {out} is not writable")

    def ref_params(self, seed) -> ReferenceParams:
        return ReferenceParams(size=self.ref_size, repeats=self.repeats, seed=seed,
                               max_cells=self.cells)


@dataclass(frozen=True)
class RateTable:
    """Per-size summary of a statistic over seeds, with a log-log fit."""

    rows: tuple                 # (N, median, min, max, seed count)
    slope: float
    intercept: float
    values: dict = field(default_factory=dict)
    label: str = ""

    @classmethod
    def from_values(cls, values: dict, label: str = "") -> "RateTable":
        rows = []
        for N in sorted(values):
            v = np.asarray(values[N], dtype=float)
            rows.append((int(N), float(np.median(v)), float(v.min()), float(v.max()), len(v)))
        fit = [(math.log(r[0]), math.log(r[1])) for r in rows if r[1] > 0 and r[0] > 0]
        if len(fit) >= 2:
            x, y = np.array(fit).T
            slope, intercept = (float(c) for c in np.polyfit(x, y, 1))
        else:
            slope = intercept = float("nan")
        return cls(tuple(rows), slope, intercept,
                   {int(k): [float(x) for x in v] for k, v in values.items()}, label)

    @property
    def sizes(self):
        return [r[0] for r in self.rows]

    @property
    def medians(self):
        return [r[1] for r in self.rows]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["N", "median", "min", "max", "seeds"])
            for N, med, lo, hi, k in self.rows:
                w.writerow([N, f"{med:.12g}", f"{lo:.12g}", f"{hi:.12g}", k])

    def to_dict(self):
        return {"label": self.label, "rows": [list(r) for r in self.rows],
                "slope": self.slope, "intercept": self.intercept,
                "values": {str(k): v for k, v in self.values.items()}}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(tuple(r) for r in d["rows"]), d["slope"], d["intercept"],
                   {int(k): v for k, v in d["values"].items()}, d.get("label", ""))

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    def __eq__(self, other):
        return isinstance(other, RateTable) and self.to_json() == other.to_json()


def _rng(*seed):
    return np.random.default_rng([int(s) for s in seed])


# ---------------------------------------------------------------------------
# benches
# ---------------------------------------------------------------------------

def _available_cpus():
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def _map_cells(fn, cells, workers=None):
    """fn over (N, seed) cells, in order; worker processes when more than one CPU.

    Every cell seeds its own generators, so the result does not depend on
    the number of workers.
    """
    cells = list(cells)
    workers = _available_cpus() if workers is None else int(workers)
    workers = min(workers, len(cells))
    if workers <= 1:
        return [fn(*c) for c in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*cells)))


def _collect(config, results):
    values = {N: [] for N in config.sizes}
    for (N, _), v in zip(_grid(config), results):
        values[N].append(v)
    return values


def _grid(config):
    return [(N, seed) for N in config.sizes for seed in config.seeds]


def _sphere_cell(config, N, seed):
    d = config.d
    pts = uniform_sphere_points(_rng(seed, N, 0), N, d)
    sample = SphericalMeasure(pts, np.full(N, 1.0 / N))
    ref = UniformReference(d, config.ref_size, (seed, N, 1)).measure
    return w1_distance(sample, ref)


def bench_empirical_sphere(config: ExperimentConfig) -> RateTable:
    """W1 between N uniform sphere points and an independent reference sample."""
    if config.d < 2:
        raise ValueError("the empirical-sphere bench needs d >= 2")
    res = _map_cells(partial(_sphere_cell, config), _grid(config), config.options.get("workers"))
    return RateTable.from_values(_collect(config, res), "w1_empirical_sphere")


def _radial_scales(rng, N):
    # independent per-atom scales: still isotropic, no longer identically distributed
    return np.exp(rng.uniform(np.log(0.25), np.log(4.0), size=N))


def _gaussian_cell(config, mixed, N, seed):
    rng = _rng(seed, N)
    X = rng.standard_normal((N, config.d))
    if mixed:
        X *= _radial_scales(rng, N)[:, None]
    return radiality_epsilon(WeightedPointCloud.uniform(X), config.ref_params(seed)).epsilon_star


def bench_gaussian_radial(config: ExperimentConfig, mixed: bool | None = None) -> RateTable:
    """epsilon_star of N isotropic Gaussian points in R^d."""
    if config.d < 2:
        raise ValueError("the Gaussian-radial bench needs d >= 2")
    mixed = config.options.get("mixed", False) if mixed is None else mixed
    res = _map_cells(partial(_gaussian_cell, config, mixed), _grid(config),
                     config.options.get("workers"))
    return RateTable.from_values(_collect(config, res),
                                 "epsilon_star_mixed" if mixed else "epsilon_star")


def geometric_measure(n: int) -> WeightedPointCloud:
    """Weights proportional to 2^-i on the standard basis vectors e_1..e_n."""
    w = 0.5 ** np.arange(1, n + 1)
    return WeightedPointCloud(np.eye(n), w / w.sum())


def bench_counterexample(config: ExperimentConfig) -> dict:
    """Decency and projected radiality of the geometric measure."""
    n = config.n
    if n < 5:
        raise ValueError("the counterexample bench needs n >= 5")
    cloud = geometric_measure(n)
    dec = decency_alpha(cloud, max_dim=config.options.get("max_dim", 2))
    formula = 0.5 / (1.0 - 2.0 ** -n)
    eps = []
    for seed in config.seeds:
        res = project_and_certify(cloud, config.d, seed, config.ref_params(seed))
        eps.append(res.report.epsilon_star)
    return {"n": n, "d": config.d, "alpha": dec.alpha, "alpha_formula": formula,
            "alpha_error": abs(dec.alpha - formula), "decent": dec.is_decent(),
            "witness": dec.witness.tolist(), "seeds": list(config.seeds),
            "epsilon_star": eps, "min_epsilon_star": min(eps),
            "all_above_tenth": bool(min(eps) > 0.1)}


def _input_cloud(kind: str, rng, N: int, n: int) -> WeightedPointCloud:
    if kind == "gaussian":
        X = rng.standard_normal((N, n))
    elif kind == "cube":
        X = rng.uniform(-1.0, 1.0, (N, n))
    elif kind == "orthant":
        X = np.abs(rng.standard_normal((N, n))) + 1e-3
    else:
        raise ValueError(f"unknown input kind {kind!r}")
    return WeightedPointCloud.uniform(X)


def bench_supergaussian(config: ExperimentConfig) -> dict:
    """Tail check of one-dimensional functionals of a certified marginal.

    options: kind ("gaussian", "cube" or "orthant"), N, directions, c, C, R.
    The orthant input is checked directly along directions inside the
    orthant, where every functional is positive.
    """
    opt = config.options
    kind = opt.get("kind", "gaussian")
    N = int(opt.get("N", config.sizes[0]))
    ndir = int(opt.get("directions", 20))
    c, C, R = opt.get("c", 0.05), opt.get("C", 4.0), opt.get("R", 2.0)
    seed = config.seeds[0]
    cloud = _input_cloud(kind, _rng(seed, 0), N, config.n)
    rng = _rng(seed, 1)
    if kind == "orthant":
        target = cloud
        dirs = np.abs(rng.standard_normal((ndir, config.n)))
        eps = None
    else:
        res = full_pipeline(cloud, config.d, seed=seed, ref_params=config.ref_params(seed))
        target = res.marginal
        dirs = rng.standard_normal((ndir, config.d))
        eps = res.report.epsilon_star
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    reports = [supergaussian_check(target, u, c, C, R) for u in dirs]
    passed = [r.passed for r in reports]
    return {"kind": kind, "N": N, "n": config.n, "d": config.d, "seed": seed,
            "epsilon_star": eps, "pass_rate": float(np.mean(passed)),
            "passes": passed, "medians": [r.median for r in reports],
            "witness_t": [r.witness_t for r in reports],
            "constants": {"c": c, "C": C, "R": R}}


BENCHES = {
    "empirical-sphere": bench_empirical_sphere,
    "gaussian-radial": bench_gaussian_radial,
    "counterexample": bench_counterexample,
    "supergaussian": bench_supergaussian,
}
