import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from radial_marginals.measures import (DimensionMismatchError, MeasureError, SphericalMeasure,
                                       WeightedPointCloud, mixture, total_variation)
from radial_marginals.transport import (AtomCapExceeded, UniformReference, default_witnesses,
                                        distance_witness, geodesic_cost, geodesic_distance,
                                        kr_dual_lower_bound, support_lower_bound, w1_distance,
                                        w1_exact, w1_to_uniform)

from oracles import (brute_force_w1, circle_w1_to_uniform_quadrature,
                     mean_distance_to_equispaced, sphere_dist)


def random_sphere_measure(rng, k, d):
    x = rng.standard_normal((k, d))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return SphericalMeasure(x, rng.dirichlet(np.ones(k)))


def on_circle(angles, weights=None):
    angles = np.asarray(angles, float)
    w = np.full(len(angles), 1 / len(angles)) if weights is None else np.asarray(weights, float)
    return SphericalMeasure(np.c_[np.cos(angles), np.sin(angles)], w)


seeds = st.integers(0, 2 ** 32 - 1)


# ---------------------------------------------------------------------------
# geodesic distance

def test_geodesic_examples():
    assert geodesic_distance([1.0, 0.0], [1.0, 0.0]) == 0.0
    assert geodesic_distance([1.0, 0.0], [-1.0, 0.0]) == pytest.approx(math.pi, abs=1e-15)
    assert geodesic_distance([1.0, 0.0], [0.0, 1.0]) == pytest.approx(math.pi / 2, abs=1e-15)


def test_geodesic_zero_sphere():
    assert geodesic_distance([1.0], [1.0]) == 0.0
    assert geodesic_distance([1.0], [-1.0]) == math.pi


def test_geodesic_rejects_non_unit():
    with pytest.raises(MeasureError):
        geodesic_distance([1.0, 1.0], [1.0, 0.0])


@given(seeds, st.integers(2, 6))
def test_geodesic_matches_arccos(seed, d):
    rng = np.random.default_rng(seed)
    x, y = random_sphere_measure(rng, 2, d).points
    assert geodesic_distance(x, y) == pytest.approx(sphere_dist(x, y), abs=1e-7)


def test_geodesic_accurate_near_zero():
    t = 1e-9
    assert geodesic_distance([1.0, 0.0], [math.cos(t), math.sin(t)]) == pytest.approx(t, rel=1e-6)


# ---------------------------------------------------------------------------
# exact W1

def test_w1_examples():
    a = on_circle([0.3, 2.0], [0.4, 0.6])
    assert w1_exact(a, a)[0] == pytest.approx(0.0, abs=1e-15)
    x, y = on_circle([0.0]), on_circle([1.2])
    assert w1_exact(x, y)[0] == pytest.approx(1.2, abs=1e-14)
    split = SphericalMeasure([[0.0, 1.0], [0.0, -1.0]], [0.5, 0.5])
    assert w1_exact(on_circle([0.0]), split)[0] == pytest.approx(math.pi / 2, abs=1e-14)


def test_w1_plan_invariants():
    rng = np.random.default_rng(3)
    a, b = random_sphere_measure(rng, 6, 3), random_sphere_measure(rng, 5, 3)
    val, plan = w1_exact(a, b)
    rows = np.bincount(plan.source_index, plan.mass, minlength=6)
    cols = np.bincount(plan.target_index, plan.mass, minlength=5)
    assert np.allclose(rows, a.weights, atol=1e-9) and np.allclose(cols, b.weights, atol=1e-9)
    cost = geodesic_cost(a.points, b.points)[plan.source_index, plan.target_index]
    assert abs(float(cost @ plan.mass) - val) < 1e-9
    assert plan.certified


def test_w1_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        w1_exact(on_circle([0.0]), SphericalMeasure([[1.0, 0, 0]], [1.0]))


def test_w1_atom_cap():
    with pytest.raises(AtomCapExceeded):
        w1_exact(on_circle([0.0, 1.0]), on_circle([2.0, 3.0]), atom_cap=3)


def test_plan_csv(tmp_path):
    _, plan = w1_exact(on_circle([0.0, 1.0]), on_circle([2.0]))
    plan.to_csv(tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "source_idx,target_idx,mass" and len(lines) == 3


@given(seeds, st.integers(1, 6), st.integers(1, 6), st.integers(1, 4))
def test_w1_matches_dense_lp(seed, k1, k2, d):
    rng = np.random.default_rng(seed)
    a, b = random_sphere_measure(rng, k1, d), random_sphere_measure(rng, k2, d)
    ref = brute_force_w1(a.points, a.weights, b.points, b.weights)
    assert w1_exact(a, b)[0] == pytest.approx(ref, abs=1e-9)
    assert w1_distance(a, b) == pytest.approx(ref, abs=1e-9)


@given(seeds, st.integers(1, 5), st.integers(2, 4))
def test_w1_metric_axioms(seed, k, d):
    rng = np.random.default_rng(seed)
    a, b, c = (random_sphere_measure(rng, k, d) for _ in range(3))
    ab, ba = w1_exact(a, b)[0], w1_exact(b, a)[0]
    assert abs(ab - ba) < 1e-9
    assert w1_exact(a, c)[0] <= ab + w1_exact(b, c)[0] + 1e-9


@given(seeds, st.integers(2, 4))
def test_w1_bounded_by_pi_tv(seed, d):
    rng = np.random.default_rng(seed)
    base = random_sphere_measure(rng, 5, d)
    other = SphericalMeasure(base.points, rng.dirichlet(np.ones(5)))
    assert w1_exact(base, other)[0] <= math.pi * total_variation(base, other) + 1e-9


@given(seeds, st.floats(0, 1), st.integers(2, 4))
def test_mixture_convexity(seed, lam, d):
    rng = np.random.default_rng(seed)
    m1, m2, nu = (random_sphere_measure(rng, 4, d) for _ in range(3))
    mix = mixture([(lam, m1), (1 - lam, m2)])
    mix = SphericalMeasure(mix.points, mix.weights)
    lhs = w1_exact(mix, nu)[0]
    assert lhs <= lam * w1_exact(m1, nu)[0] + (1 - lam) * w1_exact(m2, nu)[0] + 1e-9


@given(seeds, st.integers(2, 4))
def test_rotation_is_an_isometry(seed, d):
    rng = np.random.default_rng(seed)
    a, b = random_sphere_measure(rng, 4, d), random_sphere_measure(rng, 4, d)
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    ra = SphericalMeasure(a.points @ q.T, a.weights)
    rb = SphericalMeasure(b.points @ q.T, b.weights)
    assert abs(w1_exact(ra, rb)[0] - w1_exact(a, b)[0]) < 1e-9


def test_near_mixture_to_uniform_bound():
    # W1(mu, sigma) <= sup W1(mu_alpha, sigma) + 4 eps when mu is within TV eps of the mixture
    ref = UniformReference(2, 4000, 11).measure
    rng = np.random.default_rng(0)
    for _ in range(10):
        comps = [on_circle(rng.uniform(0, 2 * math.pi, 6)) for _ in range(3)]
        lam = rng.dirichlet(np.ones(3))
        mix = mixture(list(zip(lam, comps)))
        w = mix.weights + rng.uniform(0, 0.02, len(mix.weights))
        mu = SphericalMeasure(mix.points, w / w.sum())
        eps = total_variation(mu, mix)
        sup = max(w1_distance(c, ref) for c in comps)
        assert w1_distance(mu, ref) <= sup + 4 * eps + 1e-9


# ---------------------------------------------------------------------------
# circle and S^0 closed forms against the LP

@given(seeds, st.integers(1, 7), st.integers(1, 7))
def test_circle_formula_matches_lp(seed, k1, k2):
    rng = np.random.default_rng(seed)
    a, b = random_sphere_measure(rng, k1, 2), random_sphere_measure(rng, k2, 2)
    assert w1_distance(a, b) == pytest.approx(w1_exact(a, b)[0], abs=1e-9)


def test_zero_sphere_is_pi_tv():
    a = SphericalMeasure([[1.0], [-1.0]], [0.7, 0.3])
    b = SphericalMeasure([[1.0], [-1.0]], [0.2, 0.8])
    assert w1_exact(a, b)[0] == pytest.approx(math.pi * 0.5, abs=1e-12)
    assert w1_distance(a, b) == pytest.approx(math.pi * 0.5, abs=1e-12)


# ---------------------------------------------------------------------------
# distance to the uniform measure

def test_reference_reproducible():
    r1, r2 = UniformReference(3, 100, 5), UniformReference(3, 100, 5)
    assert np.array_equal(r1.points, r2.points)
    assert not np.array_equal(r1.points, r1.derive(1).points)
    assert r1.measure.size == 100 and np.all(r1.measure.weights == 0.01)


def test_w1_to_reference_itself():
    ref = UniformReference(3, 500, 1)
    est, spread = w1_to_uniform(ref.measure, ref, repeats=1)
    assert est == 0.0 and spread == 0.0


def test_w1_to_uniform_rejects_zero_repeats():
    with pytest.raises(ValueError):
        w1_to_uniform(on_circle([0.0]), UniformReference(2, 10, 0), repeats=0)


@pytest.mark.parametrize("d", [2, 3, 4])
def test_dirac_to_uniform(d):
    x = np.zeros(d)
    x[0] = 1
    ref = UniformReference(d, 4000, 7)
    est, spread = w1_to_uniform(SphericalMeasure([x], [1.0]), ref, repeats=3)
    assert abs(est - math.pi / 2) <= max(spread, 0.03)


def test_antipodal_pair_to_uniform():
    oracle = circle_w1_to_uniform_quadrature([0.0, math.pi], [0.5, 0.5])
    assert oracle == pytest.approx(math.pi / 4, abs=1e-9)
    est, spread = w1_to_uniform(on_circle([0.0, math.pi]), UniformReference(2, 20000, 3))
    assert abs(est - oracle) <= max(spread, 0.01)


@given(seeds)
def test_rotation_invariance_to_uniform(seed):
    rng = np.random.default_rng(seed)
    a = random_sphere_measure(rng, 5, 3)
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    ra = SphericalMeasure(a.points @ q.T, a.weights)
    ref = UniformReference(3, 2000, seed)
    e1, s1 = w1_to_uniform(a, ref)
    e2, s2 = w1_to_uniform(ra, ref)
    # the reference itself is only a proxy; allow the reported spread plus its bias
    assert abs(e1 - e2) <= s1 + s2 + 0.1


# ---------------------------------------------------------------------------
# lower bounds

def test_kr_dual_examples():
    a = on_circle([0.3, 1.0])
    assert kr_dual_lower_bound(a, a, default_witnesses(a, a)) == pytest.approx(0.0, abs=1e-15)
    p, q = on_circle([0.0]), on_circle([math.pi])
    lb = kr_dual_lower_bound(p, q, [distance_witness([-1.0, 0.0])])
    assert lb == pytest.approx(math.pi, abs=1e-12)
    assert lb == pytest.approx(w1_exact(p, q)[0], abs=1e-12)
    with pytest.raises(ValueError):
        kr_dual_lower_bound(p, q, [])


@given(seeds, st.integers(2, 4))
def test_kr_dual_below_primal(seed, d):
    rng = np.random.default_rng(seed)
    a, b = random_sphere_measure(rng, 5, d), random_sphere_measure(rng, 5, d)
    assert kr_dual_lower_bound(a, b, default_witnesses(a, b)) <= w1_exact(a, b)[0] + 1e-9


def test_support_lower_bound_examples():
    ref = UniformReference(3, 3000, 2)
    assert support_lower_bound(ref.measure, ref) == 0.0
    north = SphericalMeasure([[0.0, 0.0, 1.0]], [1.0])
    assert support_lower_bound(north, ref) == pytest.approx(math.pi / 2, abs=0.05)


@pytest.mark.parametrize("k", [1, 2, 3, 5, 8])
def test_support_lower_bound_equispaced(k):
    # mean distance to the nearest of k equispaced points is pi/(2k)
    oracle = mean_distance_to_equispaced(k)
    assert oracle == pytest.approx(math.pi / (2 * k), abs=1e-9)
    a = on_circle(2 * math.pi * np.arange(k) / k)
    ref = UniformReference(2, 100000, 4)
    assert support_lower_bound(a, ref) == pytest.approx(oracle, abs=0.01)


@given(seeds, st.integers(1, 8), st.integers(2, 4))
def test_support_lower_bound_below_primal(seed, k, d):
    rng = np.random.default_rng(seed)
    a = random_sphere_measure(rng, k, d)
    ref = UniformReference(d, 300, seed)
    assert support_lower_bound(a, ref) <= w1_exact(a, ref.measure)[0] + 1e-9
