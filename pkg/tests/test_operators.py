"""Tests for lagmc.operators: closed forms, derivatives, limits, duality and bounds."""

import math

import numpy as np
import pytest

from lagmc import operators as ops
from lagmc.errors import OperatorDomainError
from lagmc.operators import Branch, OperatorParams

TAUS = [math.pi / 8, math.pi / 4, 3 * math.pi / 8, math.pi / 2]


def params(tau, **kw):
    return OperatorParams(tau=tau, **kw)


# ---------------------------------------------------------------------------
# Branch selection
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "tau, branch",
    [
        (math.pi / 8, Branch.LOG_QUOTIENT),
        (math.pi / 4, Branch.HARMONIC),
        (math.pi / 4 + 5e-9, Branch.HARMONIC),
        (3 * math.pi / 8, Branch.ARCTAN_QUOTIENT),
        (math.pi / 2, Branch.ARCTAN),
    ],
)
def test_branch_selection(tau, branch):
    assert params(tau).branch is branch


def test_a_b_consistent_with_tau():
    p = params(math.pi / 8)
    assert p.a == pytest.approx(1 / math.tan(math.pi / 8), abs=1e-15)
    assert p.b == pytest.approx(math.sqrt(abs(p.a**2 - 1)), abs=1e-15)
    right = params(math.pi / 2)
    assert (right.a, right.b) == (0.0, 1.0)


def test_log_det_needs_experimental_flag():
    with pytest.raises(OperatorDomainError):
        params(0.0)
    p = params(0.0, experimental=True)
    assert p.branch is Branch.EXPERIMENTAL_LOG_DET
    assert ops.eval_F(p, [math.e, math.e]) == pytest.approx(1.0)
    with pytest.raises(OperatorDomainError):
        ops.limits(p)


@pytest.mark.parametrize("tau", [-0.1, 2.0, float("nan")])
def test_tau_out_of_range(tau):
    with pytest.raises(OperatorDomainError):
        params(tau)


# ---------------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------------


def test_scalar_phi_examples():
    assert ops.scalar_phi(params(math.pi / 2), 1.0) == pytest.approx(math.pi / 4, abs=1e-15)
    assert ops.scalar_phi(params(math.pi / 4), 0.0, limit=True) == pytest.approx(-math.sqrt(2))
    with pytest.raises(OperatorDomainError):
        ops.scalar_phi(params(math.pi / 4), 0.0)


def test_scalar_phi_log_side_of_seam():
    near = ops.scalar_phi(params(math.pi / 4 - 1e-6), 2.0)
    at = ops.scalar_phi(params(math.pi / 4), 2.0)
    assert abs(near - at) <= 1e-4


def test_scalar_phi_arctan_side_of_seam_up_to_offset():
    p = params(math.pi / 4 + 1e-6)
    near = ops.scalar_phi(p, 2.0) - ops.seam_offset(p)
    assert abs(near - ops.scalar_phi(params(math.pi / 4), 2.0)) <= 1e-4


def test_eval_F_examples():
    assert ops.eval_F(params(math.pi / 2), [1.0, 1.0]) == pytest.approx(math.pi / 2, abs=1e-12)
    assert ops.eval_F(params(math.pi / 2), [0.0, 0.0], closed=True) == 0.0
    expected = -3 * math.sqrt(2) / 4
    assert ops.eval_F(params(math.pi / 4), [1.0, 3.0]) == pytest.approx(expected, abs=1e-12)


def test_eval_F_rejects_boundary_of_cone():
    with pytest.raises(OperatorDomainError):
        ops.eval_F(params(math.pi / 2), [0.0, 1.0])
    with pytest.raises(OperatorDomainError):
        ops.eval_F(params(math.pi / 2), [-1.0, 1.0], closed=True)


def test_grad_and_hess_examples():
    np.testing.assert_allclose(ops.grad_F(params(math.pi / 2), [0.0, 0.0], closed=True), [1, 1])
    np.testing.assert_allclose(
        ops.grad_F(params(math.pi / 4), [1.0, 1.0]), [math.sqrt(2) / 4] * 2, atol=1e-15
    )
    np.testing.assert_allclose(ops.hess_F_diag(params(math.pi / 2), [1.0, 1.0]), [-0.5, -0.5])
    at_apex = ops.hess_F_diag(params(math.pi / 2), [0.0, 0.0], closed=True)
    np.testing.assert_allclose(at_apex, [0, 0])


@pytest.mark.parametrize("tau", TAUS)
def test_gradient_matches_finite_differences(tau):
    p = params(tau)
    rng = np.random.default_rng(1)
    lam = np.exp(rng.uniform(-2, 2, size=(1000, 2)))
    step = 1e-6 * lam[:, 0]
    shift = np.stack([step, np.zeros_like(step)], axis=-1)
    fd = (ops.eval_F(p, lam + shift) - ops.eval_F(p, lam - shift)) / (2 * step)
    np.testing.assert_allclose(fd, ops.grad_F(p, lam)[:, 0], rtol=1e-6)


@pytest.mark.parametrize("tau", TAUS)
def test_monotone_and_concave(tau):
    p = params(tau)
    lam = np.exp(np.random.default_rng(2).uniform(-3, 3, size=(500, 2)))
    assert np.all(ops.grad_F(p, lam) > 0)
    assert np.all(ops.hess_F_diag(p, lam) <= 0)
    assert np.all(ops.dual_hess_diag(p, 1 / lam) <= 0)


@pytest.mark.parametrize("tau", TAUS)
def test_symmetric_in_eigenvalues(tau):
    p = params(tau)
    lam = np.array([[0.3, 4.0], [2.0, 0.7]])
    np.testing.assert_array_equal(ops.eval_F(p, lam), ops.eval_F(p, lam[:, ::-1]))


# ---------------------------------------------------------------------------
# Limits and bounds
# ---------------------------------------------------------------------------


def test_limits_examples():
    np.testing.assert_allclose(ops.limits(params(math.pi / 2)), (0.0, math.pi))
    np.testing.assert_allclose(ops.limits(params(math.pi / 4)), (-2 * math.sqrt(2), 0.0))


def test_limits_arctan_quotient_closed_form():
    p = params(3 * math.pi / 8)
    a, b = p.a, p.b
    s = math.sqrt(a * a + 1)
    low, high = ops.limits(p)
    assert low == pytest.approx(2 * s / b * math.atan((a - b) / (a + b)), rel=1e-14)
    assert high == pytest.approx(2 * math.pi * s / (4 * b), rel=1e-14)
    # the closed forms agree with direct evaluation near 0 and far out
    assert ops.eval_F(p, [1e-12, 1e-12]) == pytest.approx(low, abs=1e-9)
    assert ops.eval_F(p, [1e10, 1e10]) == pytest.approx(high, abs=1e-8)


@pytest.mark.parametrize("tau", TAUS)
def test_limit_ordering(tau):
    low, high = ops.limits(params(tau))
    assert low < high


def test_range_bounds_arctan():
    bounds = ops.range_bounds(params(math.pi / 2), 1.0, 1.0)
    assert bounds.grad_interval == pytest.approx((0.5, 2.0))
    assert bounds.weighted_interval == pytest.approx((0.5, 2.0))
    assert (bounds.lambda1, bounds.lambda2) == pytest.approx((0.5, 2.0))


def test_range_bounds_harmonic_upper_endpoint():
    bounds = ops.range_bounds(params(math.pi / 4), 0.0, 1e8)
    assert bounds.grad_interval == pytest.approx((math.sqrt(2), 2 * math.sqrt(2)))


@pytest.mark.parametrize("tau", TAUS)
def test_range_bounds_attained_at_constant_points(tau):
    p = params(tau)
    bounds = ops.range_bounds(p, 0.5, 2.0)
    low_grad = ops.grad_F(p, [0.5])[0]
    assert bounds.grad_interval[0] == pytest.approx(low_grad)
    assert bounds.weighted_interval[0] == pytest.approx(4.0 * ops.grad_F(p, [2.0])[0])
    assert 0 < bounds.lambda1 <= bounds.lambda2


def test_dual_range_bounds_swap_roles():
    p = params(3 * math.pi / 8)
    primal = ops.range_bounds(p, 0.5, 2.0)
    dual = ops.dual_range_bounds(p, 0.5, 2.0)
    assert dual.grad_interval == primal.weighted_interval
    assert dual.weighted_interval == primal.grad_interval
    assert (dual.s1, dual.s2) == (0.5, 2.0)


def test_delta_max_examples():
    assert ops.delta_max(params(math.pi / 2), 1.0) == pytest.approx(math.pi / 4)
    assert ops.delta_max(params(math.pi / 2), 2.0) == pytest.approx(math.pi / 2 - math.atan(2))
    assert ops.delta_max(params(math.pi / 2), 2.0) == pytest.approx(0.4636, abs=1e-4)


def test_delta_max_positive():
    rng = np.random.default_rng(3)
    for _ in range(100):
        tau = rng.uniform(0.05, math.pi / 2)
        theta = math.exp(rng.uniform(-3, 3))
        assert ops.delta_max(params(tau), theta) > 0


# ---------------------------------------------------------------------------
# Duality
# ---------------------------------------------------------------------------


def test_dual_examples():
    p = params(math.pi / 2)
    assert ops.dual_eval(p, [1.0, 1.0]) == pytest.approx(-math.pi / 2)
    np.testing.assert_allclose(ops.dual_grad(p, [1.0, 1.0]), [0.5, 0.5])


@pytest.mark.parametrize("tau", TAUS)
def test_dual_identity(tau):
    p = params(tau)
    mu = np.exp(np.random.default_rng(4).uniform(-2, 2, size=(1000, 2)))
    np.testing.assert_allclose(ops.dual_eval(p, mu) + ops.eval_F(p, 1 / mu), 0.0, atol=1e-12)
    lam = 1 / mu
    np.testing.assert_allclose(ops.dual_grad(p, mu), lam**2 * ops.grad_F(p, lam), rtol=1e-12)


# ---------------------------------------------------------------------------
# Matrix arguments
# ---------------------------------------------------------------------------


def test_matrix_identity():
    p = params(math.pi / 2)
    assert ops.eval_F_matrix(p, np.eye(2)) == pytest.approx(math.pi / 2)
    np.testing.assert_allclose(ops.dF_matrix(p, np.eye(2)), np.eye(2) / 2, atol=1e-15)


def test_matrix_rotation_invariance():
    p = params(3 * math.pi / 8)
    rng = np.random.default_rng(5)
    for _ in range(20):
        m = rng.normal(size=(2, 2))
        a = m @ m.T + 0.1 * np.eye(2)
        angle = rng.uniform(0, 2 * math.pi)
        q = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
        rotated = ops.eval_F_matrix(p, q.T @ a @ q)
        assert rotated == pytest.approx(ops.eval_F_matrix(p, a), abs=1e-12)


def test_matrix_directional_derivative():
    p = params(math.pi / 8)
    a = np.array([[2.0, 0.3], [0.3, 0.8]])
    e = np.array([[0.4, -1.0], [-1.0, 0.2]])
    eps = 1e-6
    fd = (ops.eval_F_matrix(p, a + eps * e) - ops.eval_F_matrix(p, a - eps * e)) / (2 * eps)
    assert fd == pytest.approx(np.sum(ops.dF_matrix(p, a) * e), rel=1e-6)


def test_matrix_requires_positive_definite():
    with pytest.raises(OperatorDomainError) as info:
        ops.dF_matrix(params(math.pi / 2), np.diag([1.0, -0.5]))
    assert info.value.value == pytest.approx(-0.5)


def test_three_by_three_closed_form():
    p = params(math.pi / 2, n=3)
    a = np.array([[3.0, 1.0, 0.0], [1.0, 2.0, 0.5], [0.0, 0.5, 1.0]])
    lam = np.linalg.eigvalsh(a)
    assert ops.eval_F_matrix(p, a) == pytest.approx(np.arctan(lam).sum(), abs=1e-12)
    dF = ops.dF_matrix(p, a)
    np.testing.assert_allclose(dF, np.linalg.inv(np.eye(3) + a @ a), atol=1e-12)


def test_truncated_cone_samples():
    pts = ops.sample_truncated_cone(0.5, 2.0, 2, 1000, seed=0)
    assert pts.shape == (1000, 2)
    assert np.all(pts.min(axis=1) <= 0.5)
    assert np.all(pts.max(axis=1) >= 2.0)
    assert np.all(pts > 0)
