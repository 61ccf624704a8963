import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from radial_marginals.experiments import geometric_measure
from radial_marginals.measures import (MeasureError, SphericalMeasure, WeightedPointCloud,
                                       pushforward, radial_project, total_variation)
from radial_marginals.positioning import PositioningError
from radial_marginals.projection import (DependentTupleError, full_pipeline, gaussian_matrix,
                                         gaussian_tv_bound, gaussian_tv_exact_1d,
                                         greedy_decomposition, orthogonality_tau,
                                         project_and_certify)
from radial_marginals.radiality import ReferenceParams, radiality_epsilon
from radial_marginals.transport import UniformReference, support_lower_bound

from oracles import gaussian_tv_quadrature

seeds = st.integers(0, 2 ** 32 - 1)


# ---------------------------------------------------------------------------
# Gaussian matrices

def test_gaussian_matrix_deterministic():
    assert np.array_equal(gaussian_matrix(3, 7, 42), gaussian_matrix(3, 7, 42))
    assert not np.array_equal(gaussian_matrix(3, 7, 42), gaussian_matrix(3, 7, 43))
    with pytest.raises(ValueError):
        gaussian_matrix(5, 3, 0)


def test_gaussian_matrix_mean():
    # 3.5 sigma / sqrt(1e6) = 3.5e-3 < 5e-3
    assert abs(gaussian_matrix(1000, 1000, 0).mean()) < 5e-3


def test_images_of_orthonormal_vectors_are_uncorrelated():
    q = np.linalg.qr(np.random.default_rng(0).standard_normal((6, 2)))[0]
    a, b = [], []
    for s in range(10_000):
        G = gaussian_matrix(2, 6, (99, s))
        a.append(G @ q[:, 0])
        b.append(G @ q[:, 1])
    a, b = np.array(a), np.array(b)
    cov = (a - a.mean(0)).T @ (b - b.mean(0)) / len(a)
    # each entry has standard error 1/sqrt(1e4) = 0.01
    assert np.abs(cov).max() < 0.05
    assert np.allclose(np.cov(a.T), np.eye(2), atol=0.05)


# ---------------------------------------------------------------------------
# orthogonality

def test_orthogonality_examples():
    assert orthogonality_tau(np.eye(4)).tau == 0.0
    t = orthogonality_tau([[1.0, 0, 0], [0.1, 1, 0]])
    assert t.coefficients[1, 0] == pytest.approx(0.1, abs=1e-15)
    assert t.coefficients[1, 1] == pytest.approx(1.0, abs=1e-15)
    assert t.tau == pytest.approx(0.1, abs=1e-15)
    with pytest.raises(DependentTupleError):
        orthogonality_tau([[1.0, 2, 3], [2.0, 4, 6]])
    with pytest.raises(MeasureError):
        orthogonality_tau([[0.0, 0.0], [1.0, 0.0]])


@given(seeds, st.integers(1, 6), st.integers(6, 12))
def test_orthogonal_tuple_invariants(seed, ell, n):
    v = np.random.default_rng(seed).standard_normal((ell, n))
    t = orthogonality_tau(v)
    assert t.reconstruction_error() <= 1e-9
    assert np.allclose(t.witness_basis @ t.witness_basis.T, np.eye(ell), atol=1e-10)
    assert np.all(np.diag(t.coefficients) != 0)
    assert np.allclose(np.triu(t.coefficients, 1), 0)


@given(seeds, st.integers(2, 5))
def test_tau_scale_invariant(seed, ell):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((ell, 8))
    lam = np.exp(rng.uniform(-5, 5, ell))[:, None]
    assert orthogonality_tau(v * lam).tau == pytest.approx(orthogonality_tau(v).tau, rel=1e-9, abs=1e-12)


# ---------------------------------------------------------------------------
# greedy decomposition

def test_orthonormal_basis_decomposes_exactly():
    cloud = WeightedPointCloud.uniform(np.eye(6))
    dec = greedy_decomposition(cloud, 6, 0.0, 0.0)
    assert len(dec) == 1 and dec.residual_tv == 0.0 and dec.success


def test_singletons_always_succeed():
    rng = np.random.default_rng(0)
    cloud = WeightedPointCloud(rng.standard_normal((30, 4)), rng.dirichlet(np.ones(30)))
    dec = greedy_decomposition(cloud, 1, 0.0, 0.0)
    assert dec.success and dec.residual_tv < 1e-12 and dec.residual_mass < 1e-12


def check_decomposition(cloud, dec, tau):
    assert all(t.tau <= tau for t in dec.tuples)
    for t, ix in zip(dec.tuples, dec.indices):
        assert orthogonality_tau(cloud.points[ix]).tau <= tau
    assert np.all(dec.weights >= 0)
    assert abs(dec.weights.sum() - 1) < 1e-9
    assert abs(dec.captured + dec.residual_mass - 1) < 1e-9
    assert total_variation(cloud, dec.mixture_measure(cloud)) <= dec.residual_tv + 1e-9
    assert dec.residual_tv <= dec.residual_mass + 1e-9


@given(seeds, st.integers(2, 4), st.floats(0.2, 1.0))
def test_decomposition_invariants(seed, ell, tau):
    rng = np.random.default_rng(seed)
    cloud = WeightedPointCloud(rng.standard_normal((40, 10)), rng.dirichlet(np.ones(40)))
    dec = greedy_decomposition(cloud, ell, tau, 0.1, seed=seed, budget=2000)
    check_decomposition(cloud, dec, tau)


def test_budget_exhaustion_reports_failure():
    # every pair of distinct atoms is far from orthogonal
    X = np.c_[np.ones(20), np.linspace(0, 0.1, 20)]
    dec = greedy_decomposition(WeightedPointCloud.uniform(X), 2, 0.01, 0.05, budget=50)
    assert not dec.success and dec.attempts == 50 and len(dec) == 0 and dec.residual_tv == 1.0


def test_moment_bound_precondition():
    with pytest.raises(MeasureError):
        greedy_decomposition(geometric_measure(5), 2, 0.3, 0.1, moment_bound=0.3)


def test_acceptance_rate_oracle():
    # P(tau <= 0.3) for 5 uniform directions in R^50, by direct simulation: about 0.64.
    # The default budget of 200 draws per expected tuple leaves a wide margin.
    rng = np.random.default_rng(0)
    hits = 0
    for _ in range(2000):
        v = rng.standard_normal((5, 50))
        hits += orthogonality_tau(v).tau <= 0.3
    rate = hits / 2000
    assert 0.6 < rate < 0.7
    assert 200 * rate > 50


# ---------------------------------------------------------------------------
# Gaussian total variation

def test_gaussian_tv_bound_examples():
    A = np.array([[2.0, 0.3], [0.1, 1.0]])
    assert gaussian_tv_bound(A, A, 3.0) == 0.0
    assert gaussian_tv_bound(1.0, 1.1, 3.0) == pytest.approx(0.3, abs=1e-12)
    with pytest.raises(np.linalg.LinAlgError):
        gaussian_tv_bound([[1.0, 1.0], [1.0, 1.0]], np.eye(2), 1.0)


@given(st.floats(1e-4, 0.1))
def test_gaussian_tv_closed_form_matches_quadrature(eps):
    s2 = 1 / (1 + eps)
    exact = gaussian_tv_exact_1d(1.0, s2)
    assert exact == pytest.approx(gaussian_tv_quadrature(1.0, s2), abs=1e-10)
    assert exact <= gaussian_tv_bound(1.0, 1 + eps, 3.0)


# ---------------------------------------------------------------------------
# projection and certification

def test_identity_override_returns_the_cloud():
    rng = np.random.default_rng(0)
    cloud = WeightedPointCloud.uniform(rng.standard_normal((50, 3)))
    res = project_and_certify(cloud, 3, gamma="identity", ref_params=ReferenceParams(seed=1))
    assert np.array_equal(res.marginal.points, cloud.points)
    assert res.epsilon_star == radiality_epsilon(cloud, ReferenceParams(seed=1)).epsilon_star


def test_gaussian_marginal_is_radial():
    X = np.random.default_rng(0).standard_normal((10_000, 50))
    cloud = WeightedPointCloud.uniform(X)
    for seed in range(5):
        res = project_and_certify(cloud, 2, seed, ReferenceParams(seed=seed))
        assert res.epsilon_star <= 0.2


def test_geometric_measure_marginals_fail():
    cloud = geometric_measure(20)
    for seed in range(5):
        assert project_and_certify(cloud, 2, seed, ReferenceParams(seed=seed)).epsilon_star > 0.1


def test_three_atom_cloud_cannot_be_certified():
    rng = np.random.default_rng(0)
    cloud = WeightedPointCloud.uniform(rng.standard_normal((3, 100)))
    with pytest.raises(PositioningError):
        full_pipeline(cloud, 2)
    res = full_pipeline(cloud, 2, allow_split=True, ref_params=ReferenceParams(seed=0))
    assert not res.diagnostics["success"]
    for att in res.diagnostics["attempts"]:
        assert att["epsilon_star"] > 0.25
    s = radial_project(res.marginal)
    lb = support_lower_bound(SphericalMeasure(s.points, s.weights), UniformReference(2, 100_000, 5))
    # three atoms on the circle sit at least pi/6 (mean) from a uniform point
    assert lb >= math.pi / 6 - 0.01
    assert res.epsilon_star >= min(1.0, lb) - 0.01


def test_pipeline_invariants_and_composites():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((500, 8)) @ rng.standard_normal((8, 8))
    cloud = WeightedPointCloud.uniform(X)
    res = full_pipeline(cloud, 2, seed=3, ref_params=ReferenceParams(seed=3))
    assert np.abs(res.composite - res.projection @ res.position_map).max() <= 1e-12
    assert np.array_equal(res.marginal.points, pushforward(cloud, res.composite).points)
    two_step = pushforward(pushforward(cloud, res.position_map), res.projection).points
    assert np.abs(two_step - res.marginal.points).max() <= 1e-12 * max(1.0, np.abs(two_step).max())
    d = json.loads(res.to_json())
    assert d["epsilon_star"] == res.epsilon_star and d["report"]["epsilon_star"] == res.epsilon_star


def test_pipeline_deterministic():
    cloud = WeightedPointCloud.uniform(np.random.default_rng(5).standard_normal((400, 6)))
    a = full_pipeline(cloud, 2, seed=11, ref_params=ReferenceParams(seed=11))
    b = full_pipeline(cloud, 2, seed=11, ref_params=ReferenceParams(seed=11))
    assert a.to_json() == b.to_json()


def test_pipeline_on_already_radial_cloud():
    cloud = WeightedPointCloud.uniform(np.random.default_rng(2).standard_normal((3000, 2)))
    p = ReferenceParams(seed=2)
    base = radiality_epsilon(cloud, p)
    res = full_pipeline(cloud, 2, gamma="identity", ref_params=p)
    # positioning barely moves an isotropic sample; allow the reported spreads and the
    # sampling fluctuation of a 3000-point cloud
    assert abs(res.epsilon_star - base.epsilon_star) <= base.spread + res.report.spread + 0.05


def test_triangular_perturbations_converge():
    # ensemble of Gaussian clouds; single draws jitter because shell masses are quantized
    levels = (0.1, 0.01, 0.001)
    gaps = {e: [] for e in levels}
    spreads = []
    for seed in range(8):
        rng = np.random.default_rng(seed)
        cloud = WeightedPointCloud.uniform(rng.standard_normal((1000, 2)))
        p = ReferenceParams(seed=seed)
        base = radiality_epsilon(cloud, p)
        spreads.append(base.spread)
        L = np.tril(rng.uniform(-1, 1, (2, 2)), -1)
        for eps in levels:
            # |a_ij| <= eps |a_ii| for j < i
            rep = radiality_epsilon(pushforward(cloud, np.eye(2) + eps * L), p)
            gaps[eps].append(abs(rep.epsilon_star - base.epsilon_star))
    med = [float(np.median(gaps[e])) for e in levels]
    spread = float(np.median(spreads))
    assert med[1] <= med[0] + spread and med[2] <= med[1] + spread
    assert med[2] <= spread
