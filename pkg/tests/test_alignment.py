import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import exact_ot
from tsda.alignment import (
    cost_matrix,
    format_probe_table,
    gradient_probe,
    median_bandwidth,
    mmd_loss,
    probe_table,
    sinkhorn_loss,
    soft_histogram_kl,
)
from tsda.numerics import ParameterSet, Tensor, grad_check


def pts(*rows):
    return np.array(rows, dtype=float).reshape(len(rows), -1)


# -- cost matrix -------------------------------------------------------------------------

def test_cost_examples():
    assert cost_matrix(pts(1.5), pts(1.5)).data.tolist() == [[0.0]]
    assert cost_matrix(pts(0), pts(3), p=2).data.tolist() == [[9.0]]
    assert cost_matrix(pts(0), pts(3), p=1).data.tolist() == [[3.0]]


@pytest.mark.parametrize("p", [1.0, 1.5, 2.0, 3.0])
def test_cost_matches_double_loop(p):
    rng = np.random.default_rng(int(p * 10))
    a, b = rng.normal(size=(5, 3)), rng.normal(size=(4, 3))
    ref = np.array([[np.linalg.norm(x - y) ** p for y in b] for x in a])
    np.testing.assert_allclose(cost_matrix(a, b, p).data, ref, atol=1e-10)


def test_cost_errors():
    with pytest.raises(ValueError, match="empty"):
        cost_matrix(np.zeros((0, 2)), np.zeros((3, 2)))
    with pytest.raises(ValueError, match="widths"):
        cost_matrix(np.zeros((1, 2)), np.zeros((1, 3)))
    with pytest.raises(ValueError, match="positive"):
        cost_matrix(np.zeros((1, 2)), np.zeros((1, 2)), p=0)


def test_cost_gradient_at_coincident_points_is_finite():
    z = Tensor(pts(1.0, 2.0), requires_grad=True)
    cost_matrix(z, pts(1.0, 5.0), p=1).sum().backward()
    assert np.all(np.isfinite(z.grad))


# -- Sinkhorn ------------------------------------------------------------------------------

def test_sinkhorn_single_point():
    loss, plan = sinkhorn_loss(pts(0), pts(1))
    assert np.isclose(loss.data, 1.0)
    np.testing.assert_allclose(plan.plan, [[1.0]])


def test_sinkhorn_identical_sets():
    loss, plan = sinkhorn_loss(pts(0, 1), pts(0, 1), eta=1e-3, p=2)
    assert loss.data < 1e-3
    np.testing.assert_allclose(plan.plan, np.eye(2) / 2, atol=1e-6)


def test_sinkhorn_monotone_matching():
    loss, _ = sinkhorn_loss(pts(0, 1), pts(2, 3), eta=1e-3, p=1)
    C = cost_matrix(pts(0, 1), pts(2, 3), p=1).data
    assert abs(loss.data - exact_ot(C)) < 1e-2
    assert abs(loss.data - 2.0) < 1e-2


def test_sinkhorn_parameter_errors():
    with pytest.raises(ValueError, match="eta"):
        sinkhorn_loss(pts(0), pts(1), eta=0)
    with pytest.raises(ValueError, match="iteration"):
        sinkhorn_loss(pts(0), pts(1), n_iter=0)


def test_sinkhorn_underflow_reports_remedy():
    with pytest.raises(FloatingPointError, match="log_domain"):
        sinkhorn_loss(pts(0, 1), pts(100, 101), eta=1e-3, log_domain=False)


def test_log_domain_matches_scaling_when_both_stable():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(6, 2)), rng.normal(size=(5, 2))
    l1, p1 = sinkhorn_loss(a, b, eta=0.5, n_iter=500, tol=1e-12, log_domain=False)
    l2, p2 = sinkhorn_loss(a, b, eta=0.5, n_iter=500, tol=1e-12, log_domain=True, anneal=None)
    assert not p1.log_domain and p2.log_domain
    np.testing.assert_allclose(p1.plan, p2.plan, atol=1e-10)
    assert np.isclose(l1.data, l2.data, rtol=1e-10)


def test_marginals_on_well_conditioned_input():
    rng = np.random.default_rng(1)
    _, plan = sinkhorn_loss(rng.normal(size=(8, 3)), rng.normal(size=(8, 3)), eta=0.1, n_iter=1000)
    assert plan.marginal_error <= 1e-6
    assert np.all(plan.plan >= 0)


def test_sinkhorn_gradient():
    rng = np.random.default_rng(2)
    p = ParameterSet.from_arrays({"zs": rng.normal(size=(4, 2))})
    zt = rng.normal(size=(4, 2))
    f = lambda p: sinkhorn_loss(p["zs"], zt, eta=0.5, n_iter=50, tol=0.0, log_domain=False)[0]
    assert grad_check(f, p) < 1e-5
    g = lambda p: sinkhorn_loss(p["zs"], zt, eta=0.5, n_iter=50, tol=0.0, log_domain=True, anneal=None)[0]
    assert grad_check(g, p) < 1e-5


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10_000))
def test_sinkhorn_nonnegative_and_symmetric(n, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(n, 3)) * 3, rng.normal(size=(n, 3)) * 3
    # symmetry is a property of the fixed point; eta on the cost scale keeps the instance well conditioned
    eta = float(np.median(cost_matrix(a, b).data))
    l_ab = sinkhorn_loss(a, b, eta=eta, n_iter=5000, tol=1e-13)[0].data
    l_ba = sinkhorn_loss(b, a, eta=eta, n_iter=5000, tol=1e-13)[0].data
    assert l_ab >= 0
    assert abs(l_ab - l_ba) <= 1e-9 * max(1.0, l_ab)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 4), st.integers(0, 10_000))
def test_sinkhorn_approaches_exact_ot(n, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(n, 2)), rng.normal(size=(n, 2)) + 1.0
    C = cost_matrix(a, b).data
    eta = 1e-4 * np.median(C)
    loss = sinkhorn_loss(a, b, eta=eta, n_iter=2000, tol=1e-10)[0].data
    assert abs(loss - exact_ot(C)) <= 0.01 * exact_ot(C)


# -- MMD ---------------------------------------------------------------------------------

def test_mmd_identical_sets():
    z = np.random.default_rng(3).normal(size=(6, 4))
    assert abs(mmd_loss(z, z, sigma=1.0).data) < 1e-15


@pytest.mark.parametrize("d,sigma", [(1.0, 1.0), (3.0, 0.5), (0.2, 2.0)])
def test_mmd_two_points(d, sigma):
    got = mmd_loss(pts(0.0), pts(d), sigma=sigma).data
    assert np.isclose(got, 2 * (1 - np.exp(-d * d / (2 * sigma * sigma))))


def test_mmd_matches_kernel_sums():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=(5, 3)), rng.normal(size=(7, 3))
    k = lambda x, y: np.exp(-np.sum((x - y) ** 2) / (2 * 1.3 ** 2))
    ref = (sum(k(x, y) for x in a for y in a) / 25 + sum(k(x, y) for x in b for y in b) / 49
           - 2 * sum(k(x, y) for x in a for y in b) / 35)
    assert abs(mmd_loss(a, b, sigma=1.3).data - ref) <= 1e-10


def test_mmd_bad_bandwidth():
    with pytest.raises(ValueError):
        mmd_loss(pts(0), pts(1), sigma=-1.0)


def test_median_bandwidth():
    assert median_bandwidth(pts(0.0), pts(2.0)) == 2.0
    assert median_bandwidth(pts(1.0), pts(1.0)) == 1.0


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 10_000))
def test_mmd_nonnegative(n, m, seed):
    rng = np.random.default_rng(seed)
    assert mmd_loss(rng.normal(size=(n, 2)), rng.normal(size=(m, 2))).data >= -1e-12


def test_mmd_gradient():
    rng = np.random.default_rng(5)
    p = ParameterSet.from_arrays({"zs": rng.normal(size=(4, 3))})
    zt = rng.normal(size=(5, 3))
    assert grad_check(lambda p: mmd_loss(p["zs"], zt, sigma=1.1), p) < 1e-6


def test_histogram_kl():
    z = np.random.default_rng(6).normal(size=(20, 1))
    assert abs(soft_histogram_kl(z, z).data) < 1e-12
    assert soft_histogram_kl(z, z + 3.0).data > 0.1


# -- probe ---------------------------------------------------------------------------------

def test_probe_aligned_mmd_has_no_gradient():
    assert gradient_probe(0.0, "mmd").grad_norm < 1e-12


def test_probe_decay_pattern():
    """MMD's pull fades once the clouds separate; the transport gradient does not."""
    mmd2, mmd50 = (gradient_probe(s, "mmd").grad_norm for s in (2.0, 50.0))
    sk2, sk50 = (gradient_probe(s, "sinkhorn").grad_norm for s in (2.0, 50.0))
    assert mmd50 < mmd2
    assert sk50 / sk2 >= 0.5


def test_probe_errors():
    with pytest.raises(ValueError):
        gradient_probe(-1.0, "mmd")
    with pytest.raises(ValueError, match="unknown divergence"):
        gradient_probe(1.0, "wasserstein")


def test_probe_table_format():
    recs = probe_table(shifts=(0.0, 5.0), divergences=("mmd",))
    text = format_probe_table(recs)
    lines = text.splitlines()
    assert lines[0] == "divergence,shift,value,grad_norm"
    assert lines[1].startswith("mmd,0,") and lines[2].startswith("mmd,5,")
