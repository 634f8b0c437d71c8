"""Tests for lagmc.diagnostics: certificates, operator suite, duality and refinement."""

import json
import math

import numpy as np
import pytest

from lagmc import diagnostics as diag
from lagmc.discretization import eig2, hessian
from lagmc.geometry import make_disk
from lagmc.operators import OperatorParams
from lagmc.solver import RightHandSide, build_problem, continuity_solve, solve_dual

RIGHT = OperatorParams(tau=math.pi / 2)
TAUS = [math.pi / 8, math.pi / 4, 3 * math.pi / 8, math.pi / 2]


@pytest.fixture(scope="module")
def ball():
    return build_problem(
        RIGHT, make_disk((0.0, 0.0), 1.0), make_disk((0.0, 0.0), 2.0), n_rho=16, n_theta=32
    )


@pytest.fixture(scope="module")
def ball_state(ball):
    return continuity_solve(ball)


@pytest.fixture(scope="module")
def ball_dual(ball, ball_state):
    return solve_dual(ball, ball_state)


# ---------------------------------------------------------------------------
# Certificates on the exact disk solution
# ---------------------------------------------------------------------------


def test_obliqueness_on_ball(ball, ball_state):
    record = diag.check_obliqueness(ball_state, ball)
    assert record.passed
    assert record.minimum == pytest.approx(1.0, abs=1e-8)
    assert record.identity_err <= 1e-8


def test_pinching_on_ball(ball, ball_state):
    record = diag.check_pinching(ball_state, ball)
    assert record.mu_hat == pytest.approx(2.0, abs=1e-8)
    assert record.omega_hat == pytest.approx(2.0, abs=1e-8)
    assert record.det_target == pytest.approx(4.0)
    assert record.det_crossing
    assert record.mass_err <= 1e-6
    assert record.c2_constant == pytest.approx(2.0, abs=1e-8)


def test_mean_curvature_on_ball(ball, ball_state):
    record = diag.check_mean_curvature(ball_state, ball)
    assert record.error <= 1e-6
    assert record.oracle_gap <= 1e-6


def test_boundary_image_and_range_margin(ball, ball_state):
    assert diag.boundary_image_err(ball_state, ball) <= 1e-10
    low, high = diag.operator_range_margin(ball_state, ball)
    assert low == pytest.approx(2 * math.atan(2.0), abs=1e-8)
    assert high == pytest.approx(math.pi - 2 * math.atan(2.0), abs=1e-8)


def test_duality_on_ball(ball, ball_state, ball_dual):
    record = diag.check_duality(ball_state, ball_dual, ball)
    assert record.c_dual_err <= 1e-8
    assert record.roundtrip_err <= 1e-3
    assert record.roundtrip_err <= 5 * record.spacing**2
    assert record.reciprocity_err <= 1e-6
    assert record.outside_count == 0
    assert record.dual_pinching.det_target == pytest.approx(0.25)
    assert record.pinching_reciprocal_gap <= 1e-8
    assert record.dual_obliqueness_min == pytest.approx(1.0, abs=1e-8)
    assert record.obliqueness_gap <= 1e-8
    assert diag.matched_obliqueness_gap(ball_state, ball_dual, ball) == record.obliqueness_gap


def test_uniqueness_on_ball(ball, ball_state):
    record = diag.check_uniqueness(ball, first=ball_state)
    assert record.conclusive
    assert record.error <= 1e-6
    assert record.c_gap <= 1e-7


def test_perturbed_seed_stays_convex(ball):
    seed = diag.perturbed_seed(ball)
    low = eig2(hessian(seed))[0].min()
    assert low > 0.5
    base = np.sum(ball.grid.nodes**2, axis=1)
    assert np.abs(seed.values - base).max() > 0.01


def test_report_has_no_hard_failures(ball, ball_state, ball_dual):
    structure = [diag.verify_structure_conditions(RIGHT, 0.5, 2.0, samples=500)]
    report = diag.build_report(ball_state, ball, ball_dual, structure=structure)
    assert report.hard_failures(1e-8, 1e-6) == []
    payload = report.to_dict()
    json.dumps(payload, allow_nan=False)
    assert payload["c"] == pytest.approx(2 * math.atan(2.0), abs=1e-8)
    assert payload["duality"]["c_dual_err"] <= 1e-8


def test_hard_failures_flag_bad_states(ball, ball_state):
    report = diag.build_report(ball_state, ball)
    failing = report.hard_failures(1e-8, 10.0)
    assert any("Hessian" in message for message in failing)


def test_jsonable_maps_non_finite_to_null():
    out = diag.jsonable({"a": math.inf, "b": [np.float64(1.5), np.nan], "c": np.int64(3)})
    assert out == {"a": None, "b": [1.5, None], "c": 3}


# ---------------------------------------------------------------------------
# Operator certificates
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("tau", TAUS)
@pytest.mark.parametrize("pair", [(0.5, 2.0), (1.0, 1.0)])
def test_structure_conditions_hold(tau, pair):
    margins = diag.verify_structure_conditions(OperatorParams(tau=tau), *pair, samples=2000)
    assert margins.passed
    assert margins.slack >= 0
    assert margins.failing_sample is None
    assert 0 < margins.lambda1 <= margins.lambda2


def test_structure_lambda_values_for_arctan():
    margins = diag.verify_structure_conditions(RIGHT, 1.0, 1.0, samples=200)
    assert (margins.lambda1, margins.lambda2) == pytest.approx((0.5, 2.0))


@pytest.mark.parametrize("tau", TAUS)
def test_operator_suite_passes(tau):
    checks = diag.operator_suite(OperatorParams(tau=tau), samples=500)
    failed = [c.name for c in checks if not c.passed]
    assert failed == []
    names = {c.name for c in checks}
    assert {"gradient_finite_difference", "seam_continuity", "dual_identity"} <= names


def test_operator_suite_tabulates_arctan_values():
    checks = {c.name: c for c in diag.operator_suite(RIGHT, samples=100)}
    assert checks["tabulated_values"].passed


# ---------------------------------------------------------------------------
# Refinement
# ---------------------------------------------------------------------------


def test_refinement_levels_nest():
    assert diag.refinement_levels(8, 16, 3) == [(8, 16), (15, 32), (29, 64)]


def test_refinement_requires_three_levels(ball):
    with pytest.raises(ValueError):
        diag.refinement_deltas(ball, levels=2)


def test_two_level_deltas_fill_the_report(ball, ball_state):
    deltas = diag.two_level_deltas(ball, ball_state)
    assert deltas["coarse"] == [8, 16]
    assert deltas["fine"] == [16, 32]
    assert deltas["coarse_values"]["c"] == pytest.approx(2 * math.atan(2.0), abs=1e-8)
    assert deltas["deltas"]["c"] <= 1e-8
    assert deltas["deltas"]["obliqueness_min"] <= 1e-8
    report = diag.build_report(ball_state, ball, refinement=deltas)
    assert report.to_dict()["refinement"]["deltas"]["c"] == deltas["deltas"]["c"]


def test_two_level_deltas_skip_the_coarsest_grid():
    problem = build_problem(
        RIGHT, make_disk((0.0, 0.0), 1.0), make_disk((0.0, 0.0), 2.0), n_rho=8, n_theta=16
    )
    assert diag.two_level_deltas(problem, continuity_solve(problem)) is None


@pytest.mark.slow
def test_ball_refinement_is_exact_at_every_level():
    problem = build_problem(
        RIGHT, make_disk((0.0, 0.0), 1.0), make_disk((0.0, 0.0), 2.0), n_rho=8, n_theta=16
    )
    study = diag.refinement_deltas(problem, levels=3)
    assert study["reference"] == "exact"
    assert study["exact_at_all_levels"]
    assert all(order is None for order in study["u_order"])
    assert max(study["c_deltas"]) <= 1e-8


def kappa_problem(n_rho, n_theta):
    return build_problem(
        RIGHT,
        make_disk((0.0, 0.0), 1.0),
        make_disk((0.0, 0.0), 2.0),
        f=RightHandSide.affine((0.05, 0.0)),
        n_rho=n_rho,
        n_theta=n_theta,
    )


@pytest.fixture(scope="module")
def kappa():
    return kappa_problem(24, 48)


@pytest.fixture(scope="module")
def kappa_state(kappa):
    return continuity_solve(kappa)


@pytest.mark.slow
def test_affine_forcing_certificates(kappa, kappa_state):
    oblique = diag.check_obliqueness(kappa_state, kappa)
    assert oblique.minimum > 0.1
    assert oblique.identity_err <= 1e-6
    pinch = diag.check_pinching(kappa_state, kappa)
    assert pinch.det_crossing
    assert pinch.mass_err <= 1e-2
    assert diag.boundary_image_err(kappa_state, kappa) <= 1e-4


@pytest.mark.slow
def test_affine_forcing_mean_curvature_converges(kappa, kappa_state):
    coarse = diag.check_mean_curvature(kappa_state, kappa)
    finer = kappa_problem(47, 96)
    fine = diag.check_mean_curvature(continuity_solve(finer), finer)
    assert math.log2(coarse.error / fine.error) >= 0.9
    for record in (coarse, fine):
        assert record.oracle_gap <= 1e-8
        assert record.oracle_error == pytest.approx(record.error, abs=1e-8)


@pytest.mark.slow
def test_affine_forcing_duality(kappa, kappa_state):
    record = diag.check_duality(kappa_state, solve_dual(kappa, kappa_state), kappa)
    h2 = record.spacing**2
    assert record.c_dual_err <= 5e-3 * h2
    assert record.roundtrip_err <= 5 * h2
    assert record.outside_count == 0
    assert record.obliqueness_gap <= h2


@pytest.mark.slow
def test_affine_forcing_uniqueness(kappa, kappa_state):
    record = diag.check_uniqueness(kappa, first=kappa_state)
    assert record.conclusive
    assert record.error <= 1e-6
    assert record.c_gap <= 1e-8
