"""
lagmc.diagnostics — numerical certificates computed from converged solve states.

Each check_* function is a pure function of its inputs and returns a small
record; build_report collects them into a DiagnosticsReport whose to_dict()
is the JSON report written by the CLI. Hard certificates (positive
obliqueness, uniform convexity, residuals within tolerance) decide the exit
code; everything else is reported as measured.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional

import numpy as np
from scipy.interpolate import CubicSpline, RectBivariateSpline

from lagmc import operators as ops
from lagmc.discretization import (
    MIN_ANGULAR_NODES,
    MIN_RADIAL_NODES,
    MappedGrid,
    ScalarField,
    eig2,
    gradient,
    hessian,
    integrate_det_hessian,
    mean_value,
    third_derivatives,
)
from lagmc.errors import AdmissibilityError, ContinuationFailure
from lagmc.geometry import ShapeKind, project_to_boundary
from lagmc.operators import EigenvalueOperator, OperatorParams
from lagmc.solver import (
    ProblemSpec,
    SolveState,
    c_bracket,
    continuity_solve,
    initial_guess,
)

logger = logging.getLogger("lagmc.diagnostics")

PERTURBATION_AMPLITUDE = 0.05
RECIPROCITY_SAMPLES = 100
SPLINE_PAD = 3
EXACT_THRESHOLD = 1e-10
# round trip and Hessian reciprocity hold to this multiple of h^2
DUALITY_H2_FACTOR = 5.0


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ObliquenessRecord:
    minimum: float
    identity_err: float

    @property
    def passed(self) -> bool:
        return self.minimum > 0.0


@dataclass(frozen=True)
class PinchingRecord:
    mu_hat: float
    omega_hat: float
    pinching_ordered: bool
    det_target: float
    det_crossing: bool
    det_closest_node: int
    det_closest_gap: float
    mass_err: float
    max_eigenvalue: float
    min_eigenvalue: float
    c2_constant: float


@dataclass(frozen=True)
class MeanCurvatureRecord:
    error: float
    error_by_direction: List[float]
    oracle_gap: float
    oracle_error: float


@dataclass(frozen=True)
class DualityRecord:
    roundtrip_err: float
    c_dual_err: float
    reciprocity_err: float
    outside_count: int
    spacing: float
    dual_pinching: PinchingRecord
    pinching_reciprocal_gap: float
    dual_obliqueness_min: float
    obliqueness_gap: float
    c_primal: float
    c_dual: float

    @property
    def roundtrip_passed(self) -> bool:
        return self.roundtrip_err <= DUALITY_H2_FACTOR * self.spacing**2

    @property
    def reciprocity_passed(self) -> bool:
        return self.reciprocity_err <= DUALITY_H2_FACTOR * self.spacing**2


@dataclass(frozen=True)
class UniquenessRecord:
    error: Optional[float]
    c_gap: Optional[float]
    conclusive: bool
    message: str = ""


@dataclass(frozen=True)
class StructureMargins:
    tau: float
    s1: float
    s2: float
    samples: int
    lambda1: float
    lambda2: float
    grad_slack: float
    weighted_slack: float
    dual_grad_slack: float
    dual_weighted_slack: float
    min_gradient: float
    max_hessian: float
    max_dual_hessian: float
    failing_sample: Optional[List[float]] = None

    @property
    def slack(self) -> float:
        return min(
            self.grad_slack, self.weighted_slack, self.dual_grad_slack, self.dual_weighted_slack
        )

    @property
    def passed(self) -> bool:
        return (
            self.slack >= 0.0
            and self.min_gradient > 0.0
            and self.max_hessian <= 0.0
            and self.max_dual_hessian <= 0.0
        )


@dataclass(frozen=True)
class OperatorCheck:
    name: str
    passed: bool
    worst: float
    tolerance: float
    detail: str = ""


@dataclass
class DiagnosticsReport:
    tau: float
    c: float
    t: float
    residual_interior: float
    residual_boundary: float
    residual_mean: float
    min_hessian_eig: float
    obliqueness_min: float
    obliqueness_identity_err: float
    pinching: PinchingRecord
    mass_err: float
    boundary_image_err: float
    mean_curvature_err: float
    mean_curvature_oracle_gap: float
    operator_range_margin: List[float]
    c_bracket: List[float]
    duality_roundtrip_err: Optional[float] = None
    c_dual_err: Optional[float] = None
    duality: Optional[DualityRecord] = None
    uniqueness_err: Optional[float] = None
    uniqueness: Optional[UniquenessRecord] = None
    structure_margins: Optional[float] = None
    structure: List[StructureMargins] = field(default_factory=list)
    refinement: Optional[dict] = None

    def hard_failures(self, residual_tol: float, eps_pos: float) -> List[str]:
        failures = []
        if not self.obliqueness_min > 0.0:
            failures.append(f"obliqueness_min = {self.obliqueness_min:.4g} <= 0")
        if not self.min_hessian_eig > eps_pos:
            failures.append(f"min Hessian eigenvalue {self.min_hessian_eig:.4g} <= {eps_pos:g}")
        worst = max(self.residual_interior, self.residual_boundary, self.residual_mean)
        if not worst <= residual_tol:
            failures.append(f"residual {worst:.3e} above tolerance {residual_tol:g}")
        for margins in self.structure:
            if not margins.passed:
                failures.append(
                    f"structure conditions fail for (s1, s2) = ({margins.s1}, {margins.s2}) "
                    f"with slack {margins.slack:.4g}"
                )
        return failures

    def to_dict(self) -> dict:
        return jsonable(asdict(self))


def jsonable(value):
    if isinstance(value, dict):
        return {k: jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else None
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _image_h(state: SolveState, problem: ProblemSpec):
    return problem.source_h if state.dual else problem.target_h


def _operator(state: SolveState, problem: ProblemSpec) -> EigenvalueOperator:
    return EigenvalueOperator(problem.operator, dual=state.dual)


def _metric_coefficients(tau: float):
    if abs(tau - math.pi / 2) <= ops.RIGHT_ANGLE_TOLERANCE:
        return 1.0, 0.0
    return math.sin(tau), math.cos(tau)


def _periodic_spline(grid: MappedGrid, values: np.ndarray) -> RectBivariateSpline:
    """Bicubic spline in (rho, theta) with the theta axis padded periodically."""
    table = grid.as_polar_array(values)
    period = 2.0 * math.pi
    theta = np.concatenate(
        [grid.theta[-SPLINE_PAD:] - period, grid.theta, grid.theta[:SPLINE_PAD] + period]
    )
    padded = np.concatenate([table[:, -SPLINE_PAD:], table, table[:, :SPLINE_PAD]], axis=1)
    return RectBivariateSpline(grid.rho, theta, padded, kx=3, ky=3)


def _sample_at(grid: MappedGrid, splines, points: np.ndarray) -> np.ndarray:
    theta, rho = grid.domain.polar(points)
    rho = np.clip(rho, 0.0, 1.0)
    return np.stack([s.ev(rho, theta) for s in splines], axis=-1)


# ---------------------------------------------------------------------------
# Certificates
# ---------------------------------------------------------------------------


def _boundary_obliqueness(state: SolveState, problem: ProblemSpec):
    """(Du, beta, nu, <beta, nu>) at each boundary node."""
    grid = state.grid
    du = gradient(state.u)[grid.boundary_index]
    beta = _image_h(state, problem).gradient(du)
    nu = grid.domain.normal(grid.theta)
    return du, beta, nu, np.sum(beta * nu, axis=-1)


def check_obliqueness(state: SolveState, problem: ProblemSpec) -> ObliquenessRecord:
    """min <beta, nu> over the boundary and its gap to sqrt(beta^T D2u beta nu^T D2u^-1 nu)."""
    _, beta, nu, inner = _boundary_obliqueness(state, problem)
    hess = hessian(state.u)[state.grid.boundary_index]
    inv = np.linalg.inv(hess)
    quad = np.einsum("ki,kij,kj->k", beta, hess, beta) * np.einsum("ki,kij,kj->k", nu, inv, nu)
    identity = np.sqrt(np.maximum(quad, 0.0))
    record = ObliquenessRecord(
        minimum=float(inner.min()), identity_err=float(np.abs(inner - identity).max())
    )
    if not record.passed:
        logger.warning(f"obliqueness certificate failed: min <beta, nu> = {record.minimum:.4g}")
    return record


def matched_obliqueness_gap(
    state: SolveState, dual_state: SolveState, problem: ProblemSpec
) -> float:
    """max over boundary nodes x of |<beta, nu>(x) - <beta~, nu~>(Du(x))|.

    The dual values are interpolated along the dual boundary ring by a periodic cubic
    spline in the polar angle of Du(x).
    """
    du, _, _, inner = _boundary_obliqueness(state, problem)
    _, _, _, dual_inner = _boundary_obliqueness(dual_state, problem)
    dual_grid = dual_state.grid
    theta = np.append(dual_grid.theta, 2.0 * math.pi)
    spline = CubicSpline(theta, np.append(dual_inner, dual_inner[0]), bc_type="periodic")
    angle, _ = dual_grid.domain.polar(du)
    return float(np.abs(inner - spline(angle)).max())


def check_pinching(state: SolveState, problem: ProblemSpec) -> PinchingRecord:
    """Measured pinching constants, the det = Theta0^n crossing and the mass identity."""
    grid = state.grid
    hess = hessian(state.u)
    lmin, lmax, _ = eig2(hess)
    det = lmin * lmax
    n = problem.operator.n
    level = problem.theta0 ** (-n if state.dual else n)
    gap = det - level
    closest = int(np.argmin(np.abs(gap)))
    crossing = bool(gap.min() <= 0.0 <= gap.max()) or abs(gap[closest]) <= 1e-10 * level

    image_area = problem.source.area if state.dual else problem.target.area
    mass = integrate_det_hessian(state.u)
    mu_hat = float(lmin.max())
    omega_hat = float(lmax.min())
    low = float(lmin.min())
    high = float(lmax.max())
    return PinchingRecord(
        mu_hat=mu_hat,
        omega_hat=omega_hat,
        pinching_ordered=mu_hat <= omega_hat,
        det_target=level,
        det_crossing=crossing,
        det_closest_node=closest,
        det_closest_gap=float(abs(gap[closest])),
        mass_err=abs(mass - image_area) / image_area,
        max_eigenvalue=high,
        min_eigenvalue=low,
        c2_constant=max(high, 1.0 / low) if low > 0.0 else math.inf,
    )


def check_mean_curvature(state: SolveState, problem: ProblemSpec) -> MeanCurvatureRecord:
    """max_k |g^{ij} u_{ijk} - t f_k| on rings at least two away from the boundary.

    The independent contraction F^{ij} u_{ijk} is reported alongside; the two agree
    analytically for this operator family.
    """
    grid = state.grid
    keep = grid.rho_index <= grid.n_rho - 3
    hess = hessian(state.u)[keep]
    sin_t, cos_t = _metric_coefficients(problem.operator.tau)
    metric = sin_t * (np.eye(2) + hess @ hess) + 2.0 * cos_t * hess
    g_inv = np.linalg.inv(metric)
    _, dF, _ = EigenvalueOperator(problem.operator).evaluate(hess)
    df = state.t * problem.f.gradient(grid.nodes[keep])

    errors, gaps, oracle = [], [], []
    for k in (0, 1):
        third = third_derivatives(state.u, k)[keep]
        contracted = np.einsum("kij,kij->k", g_inv, third)
        via_operator = np.einsum("kij,kij->k", dF, third)
        errors.append(float(np.abs(contracted - df[:, k]).max()))
        oracle.append(float(np.abs(via_operator - df[:, k]).max()))
        gaps.append(float(np.abs(contracted - via_operator).max()))
    return MeanCurvatureRecord(
        error=max(errors), error_by_direction=errors, oracle_gap=max(gaps), oracle_error=max(oracle)
    )


def boundary_image_err(state: SolveState, problem: ProblemSpec) -> float:
    """max over boundary nodes of dist(Du(x), boundary of the image domain)."""
    grid = state.grid
    du = gradient(state.u)[grid.boundary_index]
    image = problem.source if state.dual else problem.target
    _, dist = project_to_boundary(image, du)
    return float(dist.max())


def operator_range_margin(state: SolveState, problem: ProblemSpec) -> List[float]:
    """[min F[D2u] - F(0), F(inf) - max F[D2u]] over all nodes."""
    op = _operator(state, problem)
    values, _, _ = op.evaluate(hessian(state.u))
    low, high = op.limits()
    return [float(values.min() - low), float(high - values.max())]


def check_duality(
    state: SolveState, dual_state: SolveState, problem: ProblemSpec, seed: int = 0
) -> DualityRecord:
    """Round trip D~u(Du(x)) = x, agreement of constants, and Hessian reciprocity."""
    grid = state.grid
    dual_grid = dual_state.grid
    interior = grid.interior_index
    du = gradient(state.u)
    hess = hessian(state.u)

    dual_du = gradient(dual_state.u)
    dual_hess = hessian(dual_state.u)
    grad_splines = [_periodic_spline(dual_grid, dual_du[:, k]) for k in (0, 1)]
    back = _sample_at(dual_grid, grad_splines, du[interior])
    roundtrip = float(np.linalg.norm(back - grid.nodes[interior], axis=-1).max())

    h_img = problem.target_h.value(du[interior])
    outside = int(np.count_nonzero(h_img < -grid.spacing**2))
    if outside:
        logger.warning(
            f"{outside} gradient image point(s) fall outside the target by more than h^2"
        )

    rng = np.random.default_rng(seed)
    picks = rng.choice(interior, size=min(RECIPROCITY_SAMPLES, interior.size), replace=False)
    hess_splines = [
        _periodic_spline(dual_grid, dual_hess[:, i, j]) for i, j in ((0, 0), (0, 1), (1, 1))
    ]
    entries = _sample_at(dual_grid, hess_splines, du[picks])
    dual_at = np.stack(
        [
            np.stack([entries[:, 0], entries[:, 1]], -1),
            np.stack([entries[:, 1], entries[:, 2]], -1),
        ],
        -2,
    )
    lmin, lmax, _ = eig2(hess[picks])
    mmin, mmax, _ = eig2(dual_at)
    reciprocity = float(max(np.abs(lmin * mmax - 1.0).max(), np.abs(lmax * mmin - 1.0).max()))

    primal_pinch = check_pinching(state, problem)
    dual_pinch = check_pinching(dual_state, problem)
    reciprocal_gap = max(
        abs(dual_pinch.mu_hat - 1.0 / primal_pinch.omega_hat),
        abs(dual_pinch.omega_hat - 1.0 / primal_pinch.mu_hat),
    )
    dual_obl = check_obliqueness(dual_state, problem)

    return DualityRecord(
        roundtrip_err=roundtrip,
        c_dual_err=abs(state.c - dual_state.c),
        reciprocity_err=reciprocity,
        outside_count=outside,
        spacing=grid.spacing,
        dual_pinching=dual_pinch,
        pinching_reciprocal_gap=float(reciprocal_gap),
        dual_obliqueness_min=dual_obl.minimum,
        obliqueness_gap=matched_obliqueness_gap(state, dual_state, problem),
        c_primal=state.c,
        c_dual=dual_state.c,
    )


def perturbed_seed(problem: ProblemSpec) -> ScalarField:
    """Moment-matched quadratic plus a small bump, floored back to uniform convexity."""
    grid = problem.grid
    base = initial_guess(problem.source, problem.target, grid)
    rel = grid.nodes - problem.source.center
    dist2 = np.sum(rel * rel, axis=-1)
    radius2 = dist2.max() * (1.0 + 1e-9)
    bump = np.clip(1.0 - dist2 / radius2, 0.0, None) ** 3
    values = base.values + PERTURBATION_AMPLITUDE * bump

    floor = 0.5 * float(eig2(hessian(base))[0].min())
    low = float(eig2(hessian(base.with_values(values)))[0].min())
    lift = max(0.0, floor - low)
    return base.with_values(values + 0.5 * lift * dist2)


def check_uniqueness(problem: ProblemSpec, first: Optional[SolveState] = None) -> UniquenessRecord:
    """Solve from two seeds and compare the mean-normalized solutions and constants."""
    try:
        if first is None:
            first = continuity_solve(problem)
        second = continuity_solve(problem, seed=perturbed_seed(problem))
    except (ContinuationFailure, AdmissibilityError) as exc:
        logger.warning(f"uniqueness check inconclusive: {exc}")
        return UniquenessRecord(error=None, c_gap=None, conclusive=False, message=str(exc))
    grid = problem.grid
    a = first.u.values - mean_value(grid, first.u.values)
    b = second.u.values - mean_value(grid, second.u.values)
    diff = a - b
    return UniquenessRecord(
        error=float(diff.max() - diff.min()), c_gap=abs(first.c - second.c), conclusive=True
    )


# ---------------------------------------------------------------------------
# Operator certificates
# ---------------------------------------------------------------------------


def verify_structure_conditions(
    params: OperatorParams, s1: float, s2: float, samples: int = 10_000, seed: int = 0
) -> StructureMargins:
    """Sample the truncated cone and check both sandwiches, monotonicity and both concavities."""
    pts = ops.sample_truncated_cone(s1, s2, params.n, samples, seed)
    bounds = ops.range_bounds(params, s1, s2)
    dual_bounds = ops.dual_range_bounds(params, s1, s2)

    grad = ops.grad_F(params, pts)
    hess = ops.hess_F_diag(params, pts)
    dual_hess = ops.dual_hess_diag(params, 1.0 / pts)
    grad_sum = grad.sum(axis=-1)
    weighted_sum = (grad * pts * pts).sum(axis=-1)

    def slack(values, interval):
        lo, hi = interval
        return np.minimum(values - lo, hi - values)

    grad_slack = slack(grad_sum, bounds.grad_interval)
    weighted_slack = slack(weighted_sum, bounds.weighted_interval)
    # dual sums on the reciprocal cone are the primal sums with roles exchanged
    dual_grad_slack = slack(weighted_sum, dual_bounds.grad_interval)
    dual_weighted_slack = slack(grad_sum, dual_bounds.weighted_interval)
    lam_slack = np.minimum(
        slack(grad_sum, (bounds.lambda1, bounds.lambda2)),
        slack(weighted_sum, (bounds.lambda1, bounds.lambda2)),
    )

    worst = np.minimum.reduce([grad_slack, weighted_slack, lam_slack])
    bad = int(np.argmin(worst))
    failing = None
    if worst[bad] < 0.0 or grad.min() <= 0.0 or hess.max() > 0.0 or dual_hess.max() > 0.0:
        failing = [float(v) for v in pts[bad]]
        logger.warning(f"structure condition violated at sample {failing}")

    return StructureMargins(
        tau=params.tau,
        s1=s1,
        s2=s2,
        samples=samples,
        lambda1=bounds.lambda1,
        lambda2=bounds.lambda2,
        grad_slack=float(min(grad_slack.min(), lam_slack.min())),
        weighted_slack=float(weighted_slack.min()),
        dual_grad_slack=float(dual_grad_slack.min()),
        dual_weighted_slack=float(dual_weighted_slack.min()),
        min_gradient=float(grad.min()),
        max_hessian=float(hess.max()),
        max_dual_hessian=float(dual_hess.max()),
        failing_sample=failing,
    )


def _relative_gap(approx: np.ndarray, exact: np.ndarray, floor: float = 1e-12) -> float:
    return float((np.abs(approx - exact) / np.maximum(np.abs(exact), floor)).max())


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    angle = rng.uniform(0.0, 2.0 * math.pi)
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def operator_suite(
    params: OperatorParams, samples: int = 1000, seed: int = 0
) -> List[OperatorCheck]:
    """Identity checks for one operator branch: closed forms, derivatives, duality, seam."""
    rng = np.random.default_rng(seed)
    n = params.n
    lam = np.exp(rng.uniform(math.log(1e-2), math.log(1e2), size=(samples, n)))
    checks: List[OperatorCheck] = []

    def add(name: str, worst: float, tolerance: float, detail: str = ""):
        passed = bool(worst <= tolerance)
        checks.append(OperatorCheck(name, passed, float(worst), tolerance, detail))

    low, high = ops.limits(params)
    checks.append(
        OperatorCheck(
            "limit_ordering",
            bool(low < high),
            float(high - low),
            0.0,
            f"F(0)={low:.12g}, F(inf)={high:.12g}",
        )
    )
    zero = float(ops.eval_F(params, np.zeros(n), closed=True))
    add("limit_at_zero", abs(zero - low) / max(1.0, abs(low)), 1e-12)
    far = float(ops.eval_F(params, np.full(n, 1e9)))
    add("limit_at_infinity", abs(far - high), 1e-6)

    tabulated = []
    if params.branch is ops.Branch.ARCTAN and n == 2:
        tabulated = [
            (ops.eval_F(params, [1.0, 1.0]), math.pi / 2),
            (ops.grad_F(params, [0.0, 0.0], closed=True)[0], 1.0),
            (ops.hess_F_diag(params, [1.0, 1.0])[0], -0.5),
            (ops.dual_eval(params, [1.0, 1.0]), -math.pi / 2),
            (ops.dual_grad(params, [1.0, 1.0])[0], 0.5),
        ]
    elif params.branch is ops.Branch.HARMONIC and n == 2:
        tabulated = [
            (ops.eval_F(params, [1.0, 3.0]), -3.0 * math.sqrt(2.0) / 4.0),
            (ops.grad_F(params, [1.0, 1.0])[0], math.sqrt(2.0) / 4.0),
            (low, -2.0 * math.sqrt(2.0)),
        ]
    if tabulated:
        add("tabulated_values", max(abs(a - b) for a, b in tabulated), 1e-12)

    step = 1e-6 * lam
    fd_grad = np.empty_like(lam)
    fd_hess = np.empty_like(lam)
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        plus, minus = lam + step[:, i : i + 1] * e, lam - step[:, i : i + 1] * e
        fd_grad[:, i] = (ops.eval_F(params, plus) - ops.eval_F(params, minus)) / (2 * step[:, i])
        fd_hess[:, i] = (ops.grad_F(params, plus)[:, i] - ops.grad_F(params, minus)[:, i]) / (
            2 * step[:, i]
        )
    grad = ops.grad_F(params, lam)
    hess = ops.hess_F_diag(params, lam)
    add("gradient_finite_difference", _relative_gap(fd_grad, grad), 1e-6)
    add("hessian_finite_difference", _relative_gap(fd_hess, hess), 1e-5)
    checks.append(OperatorCheck("monotonicity", bool(grad.min() > 0.0), float(grad.min()), 0.0))
    checks.append(OperatorCheck("concavity", bool(hess.max() <= 0.0), float(hess.max()), 0.0))
    dual_hess = ops.dual_hess_diag(params, 1.0 / lam)
    checks.append(
        OperatorCheck("dual_concavity", bool(dual_hess.max() <= 0.0), float(dual_hess.max()), 0.0)
    )

    values = ops.eval_F(params, lam)
    add("dual_identity", float(np.abs(ops.dual_eval(params, 1.0 / lam) + values).max()), 1e-12)
    add(
        "dual_gradient_identity",
        _relative_gap(ops.dual_grad(params, 1.0 / lam), lam * lam * grad),
        1e-12,
    )
    add("symmetry", float(np.abs(ops.eval_F(params, lam[:, ::-1]) - values).max()), 1e-12)

    # seam continuity on [0.1, 10]^n, the ArctanQuotient side shifted by its offset
    box = np.exp(rng.uniform(math.log(0.1), math.log(10.0), size=(samples, n)))
    seam = params.with_tau(math.pi / 4)
    seam_values = ops.eval_F(seam, box)
    gaps = []
    for side in (-1e-6, 1e-6):
        near = params.with_tau(math.pi / 4 + side)
        shifted = ops.eval_F(near, box) - n * ops.seam_offset(near)
        gaps.append(float(np.abs(shifted - seam_values).max()))
    add("seam_continuity", max(gaps), 1e-4)

    if n == 2:
        mats = []
        for row in box[:50]:
            q = _random_rotation(rng)
            mats.append((q @ np.diag(row) @ q.T, q))
        rot_gap, dir_gap = 0.0, 0.0
        for a, q in mats:
            base = ops.eval_F_matrix(params, a)
            rot_gap = max(rot_gap, abs(ops.eval_F_matrix(params, q.T @ a @ q) - base))
            e = rng.normal(size=(2, 2))
            e = 0.5 * (e + e.T)
            eps = 1e-5 * min(np.linalg.eigvalsh(a)[0], 1.0)
            f_plus = ops.eval_F_matrix(params, a + eps * e)
            f_minus = ops.eval_F_matrix(params, a - eps * e)
            fd = (f_plus - f_minus) / (2 * eps)
            dF = ops.dF_matrix(params, a)
            exact = float(np.sum(dF * e))
            scale = max(abs(exact), float(np.linalg.norm(dF) * np.linalg.norm(e)))
            dir_gap = max(dir_gap, abs(fd - exact) / scale)
        add("rotation_invariance", rot_gap, 1e-12)
        add("matrix_directional_derivative", dir_gap, 1e-6)

    return checks


# ---------------------------------------------------------------------------
# Exact solutions and refinement
# ---------------------------------------------------------------------------


def ball_to_ball_exact(problem: ProblemSpec) -> Optional[Callable[[np.ndarray], np.ndarray]]:
    """u(x) = (R~/2R)|x - o|^2 + o~ . x when both domains are disks and f = 0."""
    src, tgt = problem.source, problem.target
    if src.kind is not ShapeKind.DISK or tgt.kind is not ShapeKind.DISK or not problem.f.is_zero:
        return None
    ratio = tgt.description["radius"] / src.description["radius"]

    def exact(x: np.ndarray) -> np.ndarray:
        rel = x - src.origin
        return 0.5 * ratio * np.sum(rel * rel, axis=-1) + x @ tgt.origin

    return exact


def exact_error(state: SolveState, exact: Callable[[np.ndarray], np.ndarray]) -> float:
    grid = state.grid
    ref = exact(grid.nodes)
    ref = ref - mean_value(grid, ref)
    return float(np.abs(state.u.values - mean_value(grid, state.u.values) - ref).max())


def refinement_levels(n_rho: int, n_theta: int, levels: int) -> List[tuple]:
    """Resolutions obtained by doubling: coarse nodes are a subset of each finer grid."""
    out = [(n_rho, n_theta)]
    for _ in range(levels - 1):
        n_rho, n_theta = 2 * (n_rho - 1) + 1, 2 * n_theta
        out.append((n_rho, n_theta))
    return out


def _restrict(fine: MappedGrid, coarse: MappedGrid, values: np.ndarray) -> np.ndarray:
    """Inject fine nodal values onto the coarse nodes (every other ring and column)."""
    factor = (fine.n_rho - 1) // (coarse.n_rho - 1)
    angular = fine.n_theta // coarse.n_theta
    idx = [
        fine.node(factor * int(i), angular * int(j))
        for i, j in zip(coarse.rho_index, coarse.theta_index)
    ]
    return values[np.array(idx)]


def _orders(errors: List[float], drop_last: bool = False) -> List[Optional[float]]:
    """Observed orders between consecutive levels; None where errors sit at rounding level."""
    if drop_last:
        errors = errors[:-1]
    orders = []
    for a, b in zip(errors, errors[1:]):
        if a <= EXACT_THRESHOLD or b <= EXACT_THRESHOLD:
            orders.append(None)
        else:
            orders.append(math.log2(a / b))
    return orders


def refinement_deltas(problem: ProblemSpec, levels: int = 3) -> dict:
    """Solve at doubling resolutions and report errors, deltas and observed orders.

    The u error is measured against the exact solution when one is known, otherwise
    against the finest level.

    Raises:
        ValueError: if fewer than three levels are requested.
    """
    if levels < 3:
        raise ValueError(f"need >= 3 levels for a refinement study, got {levels}")
    exact = ball_to_ball_exact(problem)
    sizes = refinement_levels(problem.grid.n_rho, problem.grid.n_theta, levels)
    states = []
    rows = []
    for n_rho, n_theta in sizes:
        level = problem.with_resolution(n_rho, n_theta)
        state = continuity_solve(level)
        states.append(state)
        pinch = check_pinching(state, level)
        curvature = check_mean_curvature(state, level)
        rows.append(
            {
                "n_rho": n_rho,
                "n_theta": n_theta,
                "spacing": state.grid.spacing,
                "c": state.c,
                "mass_err": pinch.mass_err,
                "mean_curvature_err": curvature.error,
                "u_error": exact_error(state, exact) if exact else None,
            }
        )
        logger.info(f"refinement level {n_rho}x{n_theta}: c={state.c:.12g}")

    if exact is None:
        finest = states[-1]
        for row, state in zip(rows, states):
            fine_vals = _restrict(finest.grid, state.grid, finest.u.values)
            fine_vals = fine_vals - mean_value(state.grid, fine_vals)
            own = state.u.values - mean_value(state.grid, state.u.values)
            row["u_error"] = float(np.abs(own - fine_vals).max())

    u_errors = [row["u_error"] for row in rows]
    all_exact = all(e <= EXACT_THRESHOLD for e in u_errors)
    study = {
        "levels": rows,
        "reference": "exact" if exact else "finest",
        "exact_at_all_levels": bool(exact is not None and all_exact),
        "u_order": _orders(u_errors, drop_last=exact is None),
        "mass_err_order": _orders([r["mass_err"] for r in rows]),
        "mean_curvature_order": _orders([r["mean_curvature_err"] for r in rows]),
        "c_deltas": [abs(a["c"] - b["c"]) for a, b in zip(rows, rows[1:])],
    }
    return jsonable(study)


def _certificate_values(state: SolveState, problem: ProblemSpec) -> dict:
    oblique = check_obliqueness(state, problem)
    return {
        "c": state.c,
        "obliqueness_min": oblique.minimum,
        "obliqueness_identity_err": oblique.identity_err,
        "mass_err": check_pinching(state, problem).mass_err,
        "boundary_image_err": boundary_image_err(state, problem),
        "mean_curvature_err": check_mean_curvature(state, problem).error,
    }


def two_level_deltas(problem: ProblemSpec, state: SolveState) -> Optional[dict]:
    """Certificate values of a solve at half the resolution and their deltas to this one.

    Returns None when the half-resolution grid is below the minimum size or its solve fails.
    """
    grid = problem.grid
    n_rho = (grid.n_rho + 1) // 2
    n_theta = 2 * (grid.n_theta // 4)
    if n_rho < MIN_RADIAL_NODES or n_theta < MIN_ANGULAR_NODES:
        logger.info(f"no coarse level below {grid.n_rho}x{grid.n_theta}, refinement skipped")
        return None
    coarse = problem.with_resolution(n_rho, n_theta)
    try:
        coarse_state = continuity_solve(coarse)
    except (ContinuationFailure, AdmissibilityError) as exc:
        logger.warning(f"coarse refinement solve failed: {exc}")
        return None
    fine_values = _certificate_values(state, problem)
    coarse_values = _certificate_values(coarse_state, coarse)
    deltas = {k: abs(fine_values[k] - coarse_values[k]) for k in fine_values}
    logger.info(
        f"refinement {n_rho}x{n_theta} -> {grid.n_rho}x{grid.n_theta}: dc={deltas['c']:.3e}"
    )
    return jsonable(
        {
            "coarse": [n_rho, n_theta],
            "fine": [grid.n_rho, grid.n_theta],
            "coarse_values": coarse_values,
            "deltas": deltas,
        }
    )


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------


def build_report(
    state: SolveState,
    problem: ProblemSpec,
    dual_state: Optional[SolveState] = None,
    uniqueness: Optional[UniquenessRecord] = None,
    structure: Optional[List[StructureMargins]] = None,
    seed: int = 0,
    refinement: Optional[dict] = None,
) -> DiagnosticsReport:
    oblique = check_obliqueness(state, problem)
    pinch = check_pinching(state, problem)
    curvature = check_mean_curvature(state, problem)
    duality = check_duality(state, dual_state, problem, seed) if dual_state is not None else None
    structure = structure or []
    report = DiagnosticsReport(
        tau=problem.operator.tau,
        c=state.c,
        t=state.t,
        residual_interior=state.residual_interior,
        residual_boundary=state.residual_boundary,
        residual_mean=state.residual_mean,
        min_hessian_eig=state.min_hessian_eig,
        obliqueness_min=oblique.minimum,
        obliqueness_identity_err=oblique.identity_err,
        pinching=pinch,
        mass_err=pinch.mass_err,
        boundary_image_err=boundary_image_err(state, problem),
        mean_curvature_err=curvature.error,
        mean_curvature_oracle_gap=curvature.oracle_gap,
        operator_range_margin=operator_range_margin(state, problem),
        c_bracket=list(c_bracket(problem, state.t)),
        duality_roundtrip_err=duality.roundtrip_err if duality else None,
        c_dual_err=duality.c_dual_err if duality else None,
        duality=duality,
        uniqueness_err=uniqueness.error if uniqueness else None,
        uniqueness=uniqueness,
        structure_margins=min(m.slack for m in structure) if structure else None,
        structure=structure,
        refinement=refinement,
    )
    logger.info(
        f"report: c={report.c:.12g} obliqueness_min={report.obliqueness_min:.4g} "
        f"mass_err={report.mass_err:.3e} mean_curvature_err={report.mean_curvature_err:.3e}"
    )
    return report
