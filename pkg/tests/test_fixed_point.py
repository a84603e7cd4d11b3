import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import sparse

from tapnet.equilibrium import frank_wolfe
from tapnet.fixed_point import (RefineOptions, default_alpha, fp_step, lift_start, pinv_delta_od,
                                project_demand, project_nonneg, refine, vi_gap)
from tapnet.network import od_totals, route_costs

from conftest import fixture_doc
from oracles import (affine_route_costs, penrose_residuals, random_od_incidence,
                     simplex_grid, single_od_affine_equilibrium, svd_pinv)


def test_project_nonneg():
    np.testing.assert_array_equal(project_nonneg([-1.0, 2.0]), [0.0, 2.0])
    h = np.array([0.0, 3.0, 1.5])
    np.testing.assert_array_equal(project_nonneg(h), h)
    z = np.random.default_rng(0).normal(size=20)
    np.testing.assert_array_equal(project_nonneg(project_nonneg(z)), project_nonneg(z))


def test_pinv_row_of_ones():
    d = np.array([[1.0, 1.0]])
    p = pinv_delta_od(d)
    np.testing.assert_array_equal(p, [[0.5], [0.5]])
    assert max(penrose_residuals(d, p)) <= 1e-15


def test_pinv_identity():
    np.testing.assert_array_equal(pinv_delta_od(np.eye(4)), np.eye(4))


def test_pinv_random_against_svd():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n_od = int(rng.integers(1, 8))
        d = random_od_incidence(rng, n_od, n_od + int(rng.integers(0, 20)))
        p = pinv_delta_od(d)
        assert max(penrose_residuals(d, p)) <= 1e-12
        assert np.abs(p - svd_pinv(d)).max() <= 1e-10


def test_pinv_sparse_input():
    d = random_od_incidence(np.random.default_rng(1), 3, 10)
    p = pinv_delta_od(sparse.csr_matrix(d))
    assert sparse.issparse(p)
    np.testing.assert_allclose(p.toarray(), pinv_delta_od(d))


@pytest.mark.parametrize("bad", [
    np.array([[1.0, 0.0], [0.0, 0.0]]),       # empty OD row
    np.array([[1.0, 1.0], [1.0, 0.0]]),       # route in two ODs
    np.array([[2.0, 1.0]]),                   # not 0/1
])
def test_pinv_rejects_invalid(bad):
    with pytest.raises(ValueError):
        pinv_delta_od(bad)


def test_project_demand_example():
    d = np.array([[1.0, 1.0]])
    out = project_demand(np.array([1.0, 1.0]), np.array([3.0]), d, pinv_delta_od(d))
    np.testing.assert_array_equal(out, [1.5, 1.5])


def test_project_demand_fixed_when_feasible(nguyen):
    _, rs = nguyen
    h = np.random.default_rng(2).uniform(0, 50, rs.n_routes)
    p = pinv_delta_od(rs.delta_od)
    np.testing.assert_allclose(project_demand(h, rs.delta_od @ h, rs.delta_od, p), h, rtol=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e6))
def test_project_demand_exact_and_idempotent(seed, scale):
    rng = np.random.default_rng(seed)
    d = random_od_incidence(rng, 4, 25)
    p = pinv_delta_od(d)
    h = rng.uniform(-1, 1, 25) * scale
    x = rng.uniform(0, 1, 4) * scale
    once = project_demand(h, x, d, p)
    assert np.abs(d @ once - x).max() <= 1e-10 * max(1.0, scale / 1e5)
    np.testing.assert_allclose(project_demand(once, x, d, p), once, rtol=1e-12, atol=1e-9)


def test_project_demand_spreads_evenly():
    d = np.array([[1.0, 1.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]])
    out = project_demand(np.array([1.0, 2.0, 3.0, 4.0]), np.array([9.0, 1.0]), d, pinv_delta_od(d))
    np.testing.assert_allclose(out, [2.0, 3.0, 4.0, 1.0])


def test_project_demand_shape_mismatch():
    d = np.array([[1.0, 1.0]])
    with pytest.raises(ValueError):
        project_demand(np.ones(3), np.ones(1), d, pinv_delta_od(d))


# -- operator -----------------------------------------------------------------

@pytest.mark.parametrize("alpha", [1e-3, 0.1, 0.5, 2.0])
def test_pigou_equilibrium_is_fixed(pigou, alpha):
    net, rs = pigou
    np.testing.assert_allclose(fp_step(np.array([2.0, 1.0]), [3.0], net, rs, alpha), [2.0, 1.0],
                               atol=1e-14)


@pytest.mark.parametrize("delta", [1e-3, 0.1, -0.2])
def test_pigou_non_equilibrium_moves(pigou, delta):
    net, rs = pigou
    h = np.array([2.0 + delta, 1.0 - delta])
    assert np.abs(fp_step(h, [3.0], net, rs, 0.1) - h).max() > 0


def test_zero_alpha_is_identity_on_feasible(nguyen):
    net, rs = nguyen
    h = np.random.default_rng(3).uniform(0, 40, rs.n_routes)
    np.testing.assert_allclose(fp_step(h, rs.delta_od @ h, net, rs, 0.0), h, rtol=1e-13)


def test_fp_step_rejects_negative_alpha(pigou):
    with pytest.raises(ValueError):
        fp_step(np.array([1.0, 1.0]), [2.0], *pigou, alpha=-1.0)


def test_fp_step_formula(nguyen):
    net, rs = nguyen
    rng = np.random.default_rng(4)
    h = rng.normal(20, 30, rs.n_routes)
    x = rng.uniform(100, 300, 4)
    alpha = 0.01
    hp = np.maximum(h, 0)
    c = route_costs(net, rs, hp)
    d = rs.delta_od
    p = svd_pinv(d)
    arg = 2 * hp - h - alpha * c
    expect = h - hp + arg - p @ (d @ arg - x)
    np.testing.assert_allclose(fp_step(h, x, net, rs, alpha), expect, rtol=1e-12, atol=1e-10)


def test_refine_from_equilibrium(pigou):
    net, rs = pigou
    res = refine(np.array([2.0, 1.0]), [3.0], net, rs, RefineOptions(tol=1e-9))
    assert res.iterations == 0 and res.residual <= 1e-9 and res.converged


def test_lift_keeps_positive_part(nguyen):
    net, rs = nguyen
    rng = np.random.default_rng(11)
    h = rng.normal(20, 30, (3, rs.n_routes))
    lifted = lift_start(h, rng.uniform(100, 300, (3, 4)), net, rs, 0.01)
    np.testing.assert_array_equal(project_nonneg(lifted), project_nonneg(h))
    assert np.all(lifted <= np.maximum(h, 0))


@pytest.mark.parametrize("name,demand", [("pigou", 0.6), ("diamond", 0.2)])
def test_boundary_equilibrium_fixed_after_lift(request, name, demand):
    net, rs = request.getfixturevalue(name)
    a, q = affine_route_costs(fixture_doc(name), [r.links for r in rs.routes])
    h_star, _ = single_od_affine_equilibrium(a, q, demand)
    assert (h_star == 0).any()
    alpha = default_alpha(net, rs, [demand])
    z = lift_start(h_star, [demand], net, rs, alpha)[0]
    np.testing.assert_allclose(fp_step(z, [demand], net, rs, alpha), z, atol=1e-13)
    # the raw boundary point is not itself a fixed point
    assert np.abs(fp_step(h_star, [demand], net, rs, alpha) - h_star).max() > 1e-6
    cold = refine(h_star, [demand], net, rs, RefineOptions(tol=1e-12, warm_start=False))
    warm = refine(h_star, [demand], net, rs, RefineOptions(tol=1e-12))
    assert warm.iterations == 0 and cold.iterations > 0


def test_refine_recovers_pigou_from_noise(pigou):
    net, rs = pigou
    rng = np.random.default_rng(5)
    for _ in range(10):
        h0 = np.array([2.0, 1.0]) * (1 + rng.uniform(-0.1, 0.1, 2))
        res = refine(h0, [3.0], net, rs, RefineOptions(tol=1e-12))
        np.testing.assert_allclose(res.flows, [2.0, 1.0], atol=1e-6)


def test_refine_zero_demand(nguyen):
    net, rs = nguyen
    h0 = np.random.default_rng(6).normal(0, 5, rs.n_routes)
    res = refine(h0, np.zeros(4), net, rs)
    np.testing.assert_allclose(res.flows, 0.0, atol=1e-9)


def test_refine_single_step_mode(nguyen):
    net, rs = nguyen
    rng = np.random.default_rng(7)
    h0 = rng.normal(50, 40, rs.n_routes)
    x = rng.uniform(100, 300, 4)
    res = refine(h0, x, net, rs, RefineOptions(alpha=0.05, max_iters=1, warm_start=False))
    np.testing.assert_array_equal(res.flows, project_nonneg(fp_step(h0, x, net, rs, 0.05)))
    assert not res.converged


def test_refine_batch_matches_solo(nguyen):
    net, rs = nguyen
    rng = np.random.default_rng(8)
    h0 = rng.normal(50, 40, (3, rs.n_routes))
    x = rng.uniform(100, 300, (3, 4))
    batch = refine(h0, x, net, rs, RefineOptions(tol=1e-7))
    for i in range(3):
        solo = refine(h0[i], x[i], net, rs, RefineOptions(tol=1e-7))
        # matrix and vector products may round differently
        np.testing.assert_allclose(batch.flows[i], solo.flows, rtol=1e-9, atol=1e-9)
        assert abs(batch.iterations[i] - solo.iterations) <= 1


def test_refine_reaches_fw_equilibrium(nguyen):
    net, rs = nguyen
    x = np.array([180.0, 240.0, 130.0, 270.0])
    fw = frank_wolfe(net, x, gap_tol=1e-10)
    res = refine(np.zeros(rs.n_routes), x, net, rs, RefineOptions(tol=1e-10))
    assert res.converged
    np.testing.assert_allclose(rs.delta_arc @ res.flows, fw.flows, atol=1e-3 * x.max())
    assert np.abs(od_totals(rs, res.flows) - x).max() <= 1e-8
    assert vi_gap(net, rs, res.flows, x) <= 1e-6 * (route_costs(net, rs, res.flows) @ res.flows)


def test_refine_does_not_worsen_feasibility(nguyen):
    net, rs = nguyen
    rng = np.random.default_rng(9)
    x = rng.uniform(100, 300, 4)
    h0 = np.abs(rng.normal(40, 30, rs.n_routes))
    before = np.abs(od_totals(rs, h0) - x).max()
    res = refine(h0, x, net, rs)
    assert np.abs(od_totals(rs, res.flows) - x).max() <= before + 1e-10


def test_default_alpha_per_row(nguyen):
    net, rs = nguyen
    x = np.array([[100.0] * 4, [300.0] * 4])
    a = default_alpha(net, rs, x)
    assert a.shape == (2,) and a[0] > a[1] > 0
    assert default_alpha(net, rs, x[0]) == a[0]


def test_options_validation():
    with pytest.raises(ValueError):
        RefineOptions(alpha=0.0)
    with pytest.raises(ValueError):
        RefineOptions(tol=0.0)
    with pytest.raises(ValueError):
        RefineOptions(max_iters=0)


def _wardrop_violation(costs, h, tol):
    used = h > tol
    lo = costs[used].min()
    return max(costs[used].max() - lo, max(lo - costs[~used].min(), 0.0) if (~used).any() else 0.0)


@pytest.mark.parametrize("name,demand", [("pigou", 3.0), ("pigou", 0.6), ("diamond", 2.0),
                                         ("diamond", 4.0), ("diamond", 6.0)])
def test_fixed_point_satisfies_wardrop_by_grid_search(request, name, demand):
    net, rs = request.getfixturevalue(name)
    doc = fixture_doc(name)
    a, q = affine_route_costs(doc, [r.links for r in rs.routes])
    h_star, _ = single_od_affine_equilibrium(a, q, demand)
    rng = np.random.default_rng(10)
    h0 = h_star + 0.1 * demand * rng.uniform(-1, 1, rs.n_routes)
    res = refine(h0, [demand], net, rs, RefineOptions(tol=1e-13))
    np.testing.assert_allclose(res.flows, h_star, atol=1e-6)
    c = route_costs(net, rs, res.flows)
    assert _wardrop_violation(c, res.flows, 1e-9) <= 1e-6
    # VI over a grid of the feasible simplex: c(h)^T (g - h) >= 0
    worst = min(c @ (g - res.flows) for g in simplex_grid(rs.n_routes, demand, 60))
    assert worst >= -1e-6
    # the grid point with the smallest Beckmann value lies next to h
    best = min(simplex_grid(rs.n_routes, demand, 60), key=lambda g: net.beckmann(rs.delta_arc @ g))
    assert np.abs(best - res.flows).max() <= demand / 60 + 1e-9
