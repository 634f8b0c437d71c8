"""Tests for lagmc.solver: residual blocks, Jacobian, Newton and continuation."""

import math
from dataclasses import replace

import numpy as np
import pytest

from lagmc import operators as ops
from lagmc.discretization import ScalarField, mean_value
from lagmc.errors import AdmissibilityError, ContinuationFailure
from lagmc.geometry import make_disk, make_ellipse
from lagmc.operators import OperatorParams
from lagmc.solver import (
    ROUNDING_SLACK,
    RightHandSide,
    SolveState,
    Tolerances,
    build_problem,
    c_bracket,
    continuity_solve,
    initial_guess,
    jacobian,
    newton_solve,
    newton_step,
    primal_system,
    residual,
    solve_dual,
    validate_f,
)

RIGHT = OperatorParams(tau=math.pi / 2)
TAUS = [math.pi / 8, math.pi / 4, 3 * math.pi / 8, math.pi / 2]


@pytest.fixture(scope="module")
def ball():
    return build_problem(
        RIGHT, make_disk((0.0, 0.0), 1.0), make_disk((0.0, 0.0), 2.0), n_rho=16, n_theta=32
    )


def exact_ball_u(grid):
    u = np.sum(grid.nodes**2, axis=1)
    return u - mean_value(grid, u)


def state_for(grid, values, c, t=0.0, dual=False):
    return SolveState(u=ScalarField(grid, values), c=c, t=t, dual=dual)


def test_right_hand_side():
    f = RightHandSide.affine((0.5, -1.0))
    assert f.name == "affine"
    assert f.value([2.0, 1.0]) == pytest.approx(0.0)
    np.testing.assert_allclose(f.gradient([[0.0, 0.0], [3.0, 3.0]]), [[0.5, -1.0]] * 2)
    q = RightHandSide(curvature=2.0, anchor=(1.0, 0.0))
    assert q.name == "concave_quadratic"
    assert q.value([0.0, 0.0]) == pytest.approx(-1.0)
    np.testing.assert_allclose(q.hessian([0.0, 0.0]), -2 * np.eye(2))
    assert RightHandSide().is_zero


# ---------------------------------------------------------------------------
# Admissibility
# ---------------------------------------------------------------------------


def test_validate_affine_f(ball):
    report = validate_f(RightHandSide.affine((0.1, 0.0)), ball.grid, RIGHT, 1.0)
    assert report.admissible
    assert report.oscillation == pytest.approx(0.2, abs=1e-12)
    assert report.delta_max == pytest.approx(math.pi / 4)
    assert report.concavity_margin == 0.0


def test_validate_rejects_convex_f(ball):
    with pytest.raises(AdmissibilityError, match="not concave"):
        validate_f(RightHandSide(curvature=-2.0), ball.grid, RIGHT, 2.0)


def test_validate_rejects_large_oscillation(ball):
    with pytest.raises(AdmissibilityError, match="A_delta") as info:
        validate_f(RightHandSide.affine((0.5, 0.0)), ball.grid, RIGHT, ball.theta0)
    assert info.value.margin < 0


def test_validate_rejects_oscillation_beyond_range(ball):
    with pytest.raises(AdmissibilityError, match="operator range"):
        validate_f(RightHandSide.affine((2.0, 0.0)), ball.grid, RIGHT, ball.theta0)
    report = validate_f(
        RightHandSide.affine((2.0, 0.0)), ball.grid, RIGHT, ball.theta0, strict=False
    )
    assert not report.admissible


def test_continuity_solve_checks_admissibility(ball):
    with pytest.raises(AdmissibilityError):
        continuity_solve(replace(ball, f=RightHandSide.affine((0.5, 0.0))))


# ---------------------------------------------------------------------------
# Initial guess
# ---------------------------------------------------------------------------


def test_initial_guess_disk_to_disk(ball):
    u0 = initial_guess(ball.source, ball.target, ball.grid)
    np.testing.assert_allclose(u0.values, np.sum(ball.grid.nodes**2, axis=1), atol=1e-12)


def test_initial_guess_disk_to_ellipse(ball):
    target = make_ellipse((0.0, 0.0), (2.0, 1.0))
    u0 = initial_guess(ball.source, target, ball.grid)
    x, y = ball.grid.nodes[:, 0], ball.grid.nodes[:, 1]
    np.testing.assert_allclose(u0.values, x * x + y * y / 2, atol=1e-10)


def test_initial_guess_shifted_target(ball):
    target = make_disk((1.0, -1.0), 2.0)
    u0 = initial_guess(ball.source, target, ball.grid)
    x, y = ball.grid.nodes[:, 0], ball.grid.nodes[:, 1]
    np.testing.assert_allclose(u0.values, x - y + x * x + y * y, atol=1e-10)


# ---------------------------------------------------------------------------
# Residual and Jacobian
# ---------------------------------------------------------------------------


def test_residual_vanishes_at_exact_solution(ball):
    c = ops.eval_F(RIGHT, [2.0, 2.0])
    res = residual(state_for(ball.grid, exact_ball_u(ball.grid), c), ball)
    assert res.shape == (ball.grid.size + 1,)
    assert np.abs(res).max() <= 1e-9


def test_residual_shifts_with_c(ball):
    grid = ball.grid
    c = ops.eval_F(RIGHT, [2.0, 2.0])
    u = exact_ball_u(grid)
    base = residual(state_for(grid, u, c), ball)
    shifted = residual(state_for(grid, u, c + 0.1), ball)
    n_int = grid.interior_index.size
    np.testing.assert_allclose(shifted[:n_int] - base[:n_int], -0.1, atol=1e-12)
    np.testing.assert_allclose(shifted[n_int:], base[n_int:], atol=0)


def test_boundary_block_matches_target_defining_function(ball):
    grid = ball.grid
    x, y = grid.nodes[:, 0], grid.nodes[:, 1]
    u = 1.2 * x * x + 0.3 * x * y + 0.9 * y * y
    res = residual(state_for(grid, u, 0.0), ball)
    b = grid.boundary_index
    du = np.stack([2.4 * x + 0.3 * y, 0.3 * x + 1.8 * y], axis=-1)[b]
    n_int = grid.interior_index.size
    np.testing.assert_allclose(res[n_int : n_int + b.size], ball.target_h.value(du), atol=1e-9)


def fd_check(problem, state, direction, eps=1e-6):
    grid = state.grid
    w, a = direction[:-1], direction[-1]
    plus = replace(state, u=ScalarField(grid, state.u.values + eps * w), c=state.c + eps * a)
    minus = replace(state, u=ScalarField(grid, state.u.values - eps * w), c=state.c - eps * a)
    fd = (residual(plus, problem) - residual(minus, problem)) / (2 * eps)
    exact = jacobian(state, problem) @ direction
    return np.linalg.norm(fd - exact) / np.linalg.norm(exact)


def test_jacobian_matches_finite_differences(ball):
    grid = ball.grid
    x, y = grid.nodes[:, 0], grid.nodes[:, 1]
    state = state_for(grid, x * x + y * y + 0.05 * x**3, 0.3, t=0.5)
    direction = np.append(np.sin(x) * np.cos(2 * y), 0.7)
    assert fd_check(ball, state, direction) <= 1e-5


def test_dual_jacobian_matches_finite_differences(ball):
    problem = replace(ball, f=RightHandSide.affine((0.1, 0.05)))
    grid = problem.dual_grid
    x, y = grid.nodes[:, 0], grid.nodes[:, 1]
    state = state_for(grid, 0.25 * (x * x + y * y) + 0.01 * x**3, -1.0, t=0.7, dual=True)
    direction = np.append(np.cos(x + 0.5 * y), -0.4)
    assert fd_check(problem, state, direction) <= 1e-5


def test_jacobian_structure_at_ball_solution(ball):
    grid = ball.grid
    c = ops.eval_F(RIGHT, [2.0, 2.0])
    jac = jacobian(state_for(grid, exact_ball_u(grid), c), ball).toarray()
    n = grid.size
    interior = grid.interior_index
    # c column: -1 on interior rows, 0 on boundary and mean rows
    np.testing.assert_array_equal(jac[interior, -1], -1.0)
    np.testing.assert_array_equal(jac[interior.size :, -1], 0.0)
    # arctan at D^2u = 2I: dF = I / 5, so the interior block is the Laplacian / 5
    lap = (grid.operators.hxx + grid.operators.hyy).toarray()[interior] / 5.0
    scale = np.abs(lap).max()
    assert np.abs(jac[interior, :n] - lap).max() <= 1e-10 * scale


# ---------------------------------------------------------------------------
# Newton and continuation
# ---------------------------------------------------------------------------


def test_newton_step_recovers_c(ball):
    grid = ball.grid
    state = state_for(grid, exact_ball_u(grid), 0.0)
    for _ in range(5):
        state = newton_step(state, ball)
        if state.converged(1e-10):
            break
    assert state.c == pytest.approx(ops.eval_F(RIGHT, [2.0, 2.0]), abs=1e-10)


def test_newton_step_is_idempotent_at_solution(ball):
    grid = ball.grid
    c = ops.eval_F(RIGHT, [2.0, 2.0])
    start = newton_step(state_for(grid, exact_ball_u(grid), c), ball)
    again = newton_step(start, ball)
    np.testing.assert_allclose(again.u.values, start.u.values, atol=1e-12)
    assert again.c == pytest.approx(start.c, abs=1e-12)


def test_short_step_does_not_stop_an_unconverged_newton(ball):
    grid = ball.grid
    x = grid.nodes[:, 0]
    start = state_for(grid, exact_ball_u(grid) + 0.05 * x**3, 0.0)
    tol = Tolerances(step_tol=10.0)
    state = newton_solve(primal_system(ball), start, tol)
    assert state.converged(ROUNDING_SLACK * tol.residual_tol)
    np.testing.assert_allclose(state.u.values, exact_ball_u(grid), atol=1e-8)
    assert state.c == pytest.approx(ops.eval_F(RIGHT, [2.0, 2.0]), abs=1e-8)


@pytest.mark.slow
def test_loose_step_tolerance_still_reaches_the_residual_tolerance():
    tol = Tolerances(step_tol=0.5)
    problem = build_problem(
        RIGHT,
        make_disk((0.0, 0.0), 1.0),
        make_disk((0.0, 0.0), 2.0),
        f=RightHandSide.affine((0.05, 0.0)),
        n_rho=16,
        n_theta=32,
        tolerances=tol,
    )
    state = continuity_solve(problem)
    assert state.t == 1.0
    assert state.residual_max <= ROUNDING_SLACK * tol.residual_tol


@pytest.mark.parametrize("tau", TAUS)
def test_ball_to_ball_is_exact(ball, tau):
    params = OperatorParams(tau=tau)
    state = continuity_solve(ball.with_operator(params))
    np.testing.assert_allclose(state.u.values, exact_ball_u(ball.grid), atol=1e-8)
    assert state.c == pytest.approx(ops.eval_F(params, [2.0, 2.0]), abs=1e-8)
    assert state.t == 1.0
    assert len(state.path) == 2


def test_dual_solve_on_ball(ball):
    primal = continuity_solve(ball)
    dual = solve_dual(ball, primal)
    grid = ball.dual_grid
    expected = 0.25 * np.sum(grid.nodes**2, axis=1)
    expected -= mean_value(grid, expected)
    np.testing.assert_allclose(dual.u.values, expected, atol=1e-8)
    assert dual.dual
    assert dual.c == pytest.approx(primal.c, abs=1e-8)


def test_non_convex_seed_fails_at_start(ball):
    seed = ScalarField(ball.grid, -np.sum(ball.grid.nodes**2, axis=1))
    with pytest.raises(ContinuationFailure) as info:
        continuity_solve(ball, seed=seed)
    assert info.value.last_good_t is None


@pytest.mark.slow
def test_affine_forcing_follows_the_path():
    problem = build_problem(
        RIGHT,
        make_disk((0.0, 0.0), 1.0),
        make_disk((0.0, 0.0), 2.0),
        f=RightHandSide.affine((0.05, 0.0)),
        n_rho=24,
        n_theta=48,
    )
    state = continuity_solve(problem)
    assert state.t == 1.0
    assert state.residual_interior <= 1e-8
    assert state.min_hessian_eig > problem.tolerances.eps_pos
    low, high = c_bracket(problem, 1.0)
    assert low <= state.c <= high
    ts = [entry["t"] for entry in state.path]
    assert ts[0] == 0.0 and ts[-1] == 1.0
    assert all(b > a for a, b in zip(ts, ts[1:]))
    cs = np.array([entry["c"] for entry in state.path])
    assert np.all(np.abs(np.diff(cs)) < 0.1)
