"""
lagmc.solver — damped Newton with homotopy continuation for the second boundary value problem.

For t in [0, 1] the discrete system is

    F[D^2 u] - t f(x) - c = 0     at interior nodes (pole included)
    h(Du) = 0                     at boundary nodes, h the target's defining function
    mean(u) = 0                   one extra row closing the system for the unknown c

solved by Newton in (u, c) with a backtracking line search that also keeps
every nodal Hessian inside the positive cone. The dual problem on the target
domain runs through the same machinery with the dual operator, the source's
defining function and the gradient-dependent right-hand side -t f(Du) - c.

Usage:
    problem = build_problem(OperatorParams(math.pi / 2), make_disk((0, 0), 1), make_disk((0, 0), 2))
    state = continuity_solve(problem)
    state.c        # 2 arctan 2
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from lagmc.discretization import (
    MappedGrid,
    ScalarField,
    build_grid,
    hessian_of,
    mean_value,
)
from lagmc.errors import (
    AdmissibilityError,
    ContinuationFailure,
    ConvexityBreakdown,
    NewtonStall,
    ProjectionError,
)
from lagmc.geometry import ConvexDomain, DefiningFunction, defining_function, theta0
from lagmc.operators import EigenvalueOperator, OperatorParams, delta_max, limits

logger = logging.getLogger("lagmc.solver")

ARMIJO = 1e-4
MAX_HALVINGS = 20
BACKTRACK_WARNING = 10
# a short step may stop just above residual_tol once the residual is rounding-limited
ROUNDING_SLACK = 10.0


# ---------------------------------------------------------------------------
# Problem description
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RightHandSide:
    """f(x) = kappa . x - (s/2) |x - anchor|^2; s >= 0 keeps f concave."""

    kappa: Tuple[float, float] = (0.0, 0.0)
    curvature: float = 0.0
    anchor: Tuple[float, float] = (0.0, 0.0)

    @classmethod
    def affine(cls, kappa: Sequence[float]) -> "RightHandSide":
        return cls(kappa=(float(kappa[0]), float(kappa[1])))

    @property
    def name(self) -> str:
        return "affine" if self.curvature == 0.0 else "concave_quadratic"

    @property
    def is_zero(self) -> bool:
        return self.curvature == 0.0 and not any(self.kappa)

    def value(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        rel = x - np.asarray(self.anchor)
        return x @ np.asarray(self.kappa) - 0.5 * self.curvature * np.sum(rel * rel, axis=-1)

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.asarray(self.kappa) - self.curvature * (x - np.asarray(self.anchor))

    def hessian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(-self.curvature * np.eye(2), x.shape[:-1] + (2, 2))

    def to_dict(self) -> dict:
        return {
            "kind": self.name,
            "kappa": list(self.kappa),
            "curvature": self.curvature,
            "anchor": list(self.anchor),
        }


@dataclass(frozen=True)
class Tolerances:
    residual_tol: float = 1e-9
    step_tol: float = 1e-12
    eps_pos: float = 1e-6
    max_newton: int = 30


@dataclass(frozen=True)
class HomotopyControls:
    initial_step: float = 0.25
    min_step: float = 2.0**-10
    max_steps: int = 200
    growth: float = 1.5
    fast_iterations: int = 3


@dataclass(frozen=True)
class ProblemSpec:
    operator: OperatorParams
    source: ConvexDomain
    target: ConvexDomain
    source_h: DefiningFunction
    target_h: DefiningFunction
    f: RightHandSide
    grid: MappedGrid
    dual_grid: MappedGrid
    tolerances: Tolerances = field(default_factory=Tolerances)
    homotopy: HomotopyControls = field(default_factory=HomotopyControls)

    @property
    def theta0(self) -> float:
        return theta0(self.source, self.target, self.operator.n)

    @property
    def kappa_norm(self) -> float:
        return float(np.hypot(*self.f.kappa))

    def with_resolution(self, n_rho: int, n_theta: int) -> "ProblemSpec":
        return replace(
            self,
            grid=build_grid(self.source, n_rho, n_theta),
            dual_grid=build_grid(self.target, n_rho, n_theta),
        )

    def with_operator(self, params: OperatorParams) -> "ProblemSpec":
        return replace(self, operator=params)


def build_problem(
    operator: OperatorParams,
    source: ConvexDomain,
    target: ConvexDomain,
    f: Optional[RightHandSide] = None,
    n_rho: int = 32,
    n_theta: int = 64,
    tolerances: Optional[Tolerances] = None,
    homotopy: Optional[HomotopyControls] = None,
    source_boost: Optional[float] = None,
    target_boost: Optional[float] = None,
) -> ProblemSpec:
    if operator.n != 2:
        raise ValueError(f"solves are planar; operator dimension must be 2, got {operator.n}")
    return ProblemSpec(
        operator=operator,
        source=source,
        target=target,
        source_h=defining_function(source, source_boost),
        target_h=defining_function(target, target_boost),
        f=f or RightHandSide(),
        grid=build_grid(source, n_rho, n_theta),
        dual_grid=build_grid(target, n_rho, n_theta),
        tolerances=tolerances or Tolerances(),
        homotopy=homotopy or HomotopyControls(),
    )


@dataclass
class SolveState:
    u: ScalarField
    c: float
    t: float
    residual_interior: float = math.inf
    residual_boundary: float = math.inf
    residual_mean: float = math.inf
    newton_iters: int = 0
    min_hessian_eig: float = -math.inf
    worst_node: int = 0
    valid: bool = False
    dual: bool = False
    path: List[dict] = field(default_factory=list)

    @property
    def grid(self) -> MappedGrid:
        return self.u.grid

    @property
    def residual_max(self) -> float:
        return max(self.residual_interior, self.residual_boundary, self.residual_mean)

    def converged(self, tol: float) -> bool:
        return self.valid and self.residual_max <= tol

    def summary(self) -> dict:
        return {
            "t": self.t,
            "c": self.c,
            "residual_interior": self.residual_interior,
            "residual_boundary": self.residual_boundary,
            "residual_mean": self.residual_mean,
            "newton_iters": self.newton_iters,
            "min_hessian_eig": self.min_hessian_eig,
        }


# ---------------------------------------------------------------------------
# Discrete system
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiscreteSystem:
    """One side of the problem: the primal on the source or the dual on the target.

    Interior rows read operator[D^2u] - g(x, Du) - sign * c.
    """

    grid: MappedGrid
    operator: EigenvalueOperator
    image: DefiningFunction
    f: RightHandSide
    sign: float
    eps_pos: float

    @property
    def dual(self) -> bool:
        return self.operator.dual

    def forcing(self, t: float, du: np.ndarray):
        """g and dg/dp at interior nodes."""
        interior = self.grid.interior_index
        if self.dual:
            p = du[interior]
            return -t * self.f.value(p), -t * self.f.gradient(p)
        return t * self.f.value(self.grid.nodes[interior]), None


def primal_system(problem: ProblemSpec) -> DiscreteSystem:
    return DiscreteSystem(
        grid=problem.grid,
        operator=EigenvalueOperator(problem.operator),
        image=problem.target_h,
        f=problem.f,
        sign=1.0,
        eps_pos=problem.tolerances.eps_pos,
    )


def dual_system(problem: ProblemSpec) -> DiscreteSystem:
    return DiscreteSystem(
        grid=problem.dual_grid,
        operator=EigenvalueOperator(problem.operator, dual=True),
        image=problem.source_h,
        f=problem.f,
        sign=-1.0,
        eps_pos=problem.tolerances.eps_pos,
    )


@dataclass
class Evaluation:
    vector: np.ndarray
    interior: np.ndarray
    boundary: np.ndarray
    mean: float
    du: np.ndarray
    dF: np.ndarray
    lam_min: np.ndarray
    beta: np.ndarray
    forcing_grad: Optional[np.ndarray]

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.vector))

    @property
    def min_eig(self) -> float:
        return float(self.lam_min.min())

    @property
    def worst_node(self) -> int:
        return int(np.argmin(self.lam_min))


def evaluate(system: DiscreteSystem, u: np.ndarray, c: float, t: float) -> Evaluation:
    grid = system.grid
    ops = grid.operators
    du = np.stack([ops.gx @ u, ops.gy @ u], axis=-1)
    values, dF, lams = system.operator.evaluate(hessian_of(grid, u))
    g, g_p = system.forcing(t, du)
    interior = values[grid.interior_index] - g - system.sign * c
    h, beta, _ = system.image.evaluate(du[grid.boundary_index])
    mean = mean_value(grid, u)
    return Evaluation(
        vector=np.concatenate([interior, h, [mean]]),
        interior=interior,
        boundary=h,
        mean=mean,
        du=du,
        dF=dF,
        lam_min=lams[:, 0],
        beta=beta,
        forcing_grad=g_p,
    )


def _state_from(
    system: DiscreteSystem, u: np.ndarray, c: float, t: float, ev: Evaluation, iters: int
) -> SolveState:
    return SolveState(
        u=ScalarField(system.grid, u),
        c=float(c),
        t=float(t),
        residual_interior=float(np.abs(ev.interior).max()),
        residual_boundary=float(np.abs(ev.boundary).max()),
        residual_mean=abs(ev.mean),
        newton_iters=iters,
        min_hessian_eig=ev.min_eig,
        worst_node=ev.worst_node,
        valid=ev.min_eig > system.eps_pos,
        dual=system.dual,
    )


def assemble_jacobian(system: DiscreteSystem, ev: Evaluation) -> sparse.csr_matrix:
    """Exact derivative of the residual vector in (u, c)."""
    grid = system.grid
    ops = grid.operators
    interior, boundary = grid.interior_index, grid.boundary_index
    diag = sparse.diags

    dF = ev.dF
    lin = (
        diag(dF[:, 0, 0]) @ ops.hxx
        + diag(2.0 * dF[:, 0, 1]) @ ops.hxy
        + diag(dF[:, 1, 1]) @ ops.hyy
    )
    lin = lin.tocsr()[interior]
    if ev.forcing_grad is not None:
        gx = ops.gx.tocsr()[interior]
        gy = ops.gy.tocsr()[interior]
        lin = lin - diag(ev.forcing_grad[:, 0]) @ gx - diag(ev.forcing_grad[:, 1]) @ gy

    oblique = diag(ev.beta[:, 0]) @ ops.gx.tocsr()[boundary] + diag(ev.beta[:, 1]) @ ops.gy.tocsr()[
        boundary
    ]
    mean_row = sparse.csr_matrix(grid.weights[None, :] / grid.area)

    body = sparse.vstack([lin, oblique, mean_row])
    c_col = np.zeros(body.shape[0])
    c_col[: interior.size] = -system.sign
    return sparse.hstack([body, sparse.csr_matrix(c_col[:, None])]).tocsr()


def residual(state: SolveState, problem: ProblemSpec) -> np.ndarray:
    """Stacked residual (interior, boundary, mean) of a primal or dual state."""
    system = dual_system(problem) if state.dual else primal_system(problem)
    return evaluate(system, state.u.values, state.c, state.t).vector


def jacobian(state: SolveState, problem: ProblemSpec) -> sparse.csr_matrix:
    system = dual_system(problem) if state.dual else primal_system(problem)
    return assemble_jacobian(system, evaluate(system, state.u.values, state.c, state.t))


# ---------------------------------------------------------------------------
# Newton
# ---------------------------------------------------------------------------


def _damped_step(
    system: DiscreteSystem, state: SolveState, tol: Tolerances
) -> Tuple[SolveState, float]:
    """One damped Newton step. Returns the new state and the max-norm of the full step."""
    u, c, t = state.u.values, state.c, state.t
    ev = evaluate(system, u, c, t)
    if ev.min_eig > system.eps_pos and max(
        np.abs(ev.interior).max(), np.abs(ev.boundary).max(), abs(ev.mean)
    ) <= tol.residual_tol:
        return state, 0.0

    jac = assemble_jacobian(system, ev)
    step = spsolve(jac.tocsc(), -ev.vector)
    if not np.all(np.isfinite(step)):
        raise NewtonStall(f"singular Newton system at t={t:.6g}")
    w, a = step[:-1], step[-1]
    step_norm = float(np.abs(step).max())

    norm0 = ev.norm
    alpha = 1.0
    worst = (ev.worst_node, ev.min_eig)
    for halving in range(MAX_HALVINGS + 1):
        trial_u = u + alpha * w
        trial_c = c + alpha * a
        try:
            trial = evaluate(system, trial_u, trial_c, t)
        except ProjectionError:
            alpha *= 0.5
            continue
        trial_max = max(
            np.abs(trial.interior).max(), np.abs(trial.boundary).max(), abs(trial.mean)
        )
        if trial.min_eig > system.eps_pos and (
            trial.norm <= (1.0 - ARMIJO * alpha) * norm0 or trial_max <= tol.residual_tol
        ):
            if halving > BACKTRACK_WARNING:
                logger.warning(f"line search backtracked {halving} times at t={t:.6g}")
            logger.debug(
                f"  newton: alpha={alpha:.3g} |R|={trial.norm:.3e} min_eig={trial.min_eig:.4g}"
            )
            new = _state_from(system, trial_u, trial_c, t, trial, state.newton_iters + 1)
            return new, alpha * step_norm
        if trial.min_eig < worst[1]:
            worst = (trial.worst_node, trial.min_eig)
        alpha *= 0.5

    node, eig = worst
    raise ConvexityBreakdown(
        f"no damped step kept the Hessian positive and reduced the residual at t={t:.6g}; "
        f"worst node {node} (min eigenvalue {eig:.4g}); |kappa| may be too large",
        node=node,
        min_eigenvalue=eig,
    )


def newton_step(state: SolveState, problem: ProblemSpec) -> SolveState:
    """Single damped Newton step on the primal (or dual, per `state.dual`) system."""
    system = dual_system(problem) if state.dual else primal_system(problem)
    new, _ = _damped_step(system, state, problem.tolerances)
    return new


def newton_solve(system: DiscreteSystem, state: SolveState, tol: Tolerances) -> SolveState:
    """Iterate damped Newton steps until the residual blocks are below tolerance.

    A step shorter than step_tol ends the iteration only when the refreshed residual is
    within ROUNDING_SLACK of residual_tol; otherwise iteration continues.
    """
    start_iters = state.newton_iters
    state = replace(state, newton_iters=0)
    for _ in range(tol.max_newton):
        new, step = _damped_step(system, state, tol)
        if new is state:
            return _refresh(system, new)
        if step <= tol.step_tol:
            fresh = _refresh(system, new)
            if fresh.converged(ROUNDING_SLACK * tol.residual_tol):
                return fresh
        state = new
    state = _refresh(system, state)
    if state.converged(tol.residual_tol):
        return state
    raise NewtonStall(
        f"Newton did not converge in {tol.max_newton} iterations at t={state.t:.6g} "
        f"(max residual {state.residual_max:.3e}, started after {start_iters})"
    )


def _refresh(system: DiscreteSystem, state: SolveState) -> SolveState:
    ev = evaluate(system, state.u.values, state.c, state.t)
    fresh = _state_from(system, state.u.values, state.c, state.t, ev, state.newton_iters)
    fresh.path = state.path
    return fresh


# ---------------------------------------------------------------------------
# Admissibility and seeds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdmissibilityReport:
    concavity_margin: float
    oscillation: float
    delta_max: float
    delta_margin: float
    range_margin: float
    worst_node: Optional[int] = None

    @property
    def admissible(self) -> bool:
        return self.concavity_margin >= 0.0 and self.delta_margin >= 0.0 and self.range_margin > 0.0

    def to_dict(self) -> dict:
        return {
            "admissible": self.admissible,
            "concavity_margin": self.concavity_margin,
            "oscillation": self.oscillation,
            "delta_max": self.delta_max,
            "delta_margin": self.delta_margin,
            "range_margin": self.range_margin,
            "worst_node": self.worst_node,
        }


def validate_f(
    f: RightHandSide,
    grid: MappedGrid,
    params: OperatorParams,
    theta: float,
    strict: bool = True,
) -> AdmissibilityReport:
    """Check that f is concave with oscillation below delta_max(params, theta) on the grid.

    Raises:
        AdmissibilityError: when `strict` and f fails either check.
    """
    nodes = grid.nodes
    top_eig = np.linalg.eigvalsh(f.hessian(nodes))[:, -1]
    worst_concave = int(np.argmax(top_eig))
    values = f.value(nodes)
    osc = float(values.max() - values.min())
    dmax = delta_max(params, theta)
    low, high = limits(params)
    report = AdmissibilityReport(
        concavity_margin=float(-top_eig[worst_concave]),
        oscillation=osc,
        delta_max=dmax,
        delta_margin=dmax - osc,
        range_margin=(high - low) - osc,
        worst_node=worst_concave if top_eig[worst_concave] > 0.0 else int(np.argmax(values)),
    )
    if strict and not report.admissible:
        if report.concavity_margin < 0.0:
            message = (
                f"f is not concave: D^2 f has eigenvalue {top_eig[worst_concave]:.6g} > 0 "
                f"at node {worst_concave}"
            )
        elif report.range_margin <= 0.0:
            message = (
                f"osc(f) = {osc:.6g} is not below the operator range F(inf) - F(0) = "
                f"{high - low:.6g}; no solution can exist"
            )
        else:
            message = (
                f"f is outside the admissible class A_delta: osc(f) = {osc:.6g} exceeds "
                f"delta_max = {dmax:.6g} (margin {report.delta_margin:.6g})"
            )
        raise AdmissibilityError(
            message,
            node=report.worst_node,
            margin=min(report.concavity_margin, report.delta_margin, report.range_margin),
        )
    return report


def initial_guess(source: ConvexDomain, target: ConvexDomain, grid: MappedGrid) -> ScalarField:
    """u0 = b . x + (x - xbar)^T M (x - xbar) / 2 with M matching second moments."""
    var_s = np.diag(source.second_moments)
    var_t = np.diag(target.second_moments)
    m = np.sqrt(var_t / var_s)
    rel = grid.nodes - source.center
    values = grid.nodes @ target.center + 0.5 * np.sum(m * rel * rel, axis=-1)
    return ScalarField(grid, values)


def c_bracket(problem: ProblemSpec, t: float) -> Tuple[float, float]:
    """F(0) - max|t f| <= c <= F(inf) + max|t f| at any accepted state."""
    low, high = limits(problem.operator)
    fmax = t * float(np.abs(problem.f.value(problem.grid.nodes)).max())
    return low - fmax, high + fmax


def _initial_c(system: DiscreteSystem, u: np.ndarray, t: float) -> float:
    ev = evaluate(system, u, 0.0, t)
    interior = system.grid.interior_index
    w = system.grid.weights[interior]
    # at c = 0 the interior rows are operator - g
    if w.sum() > 0.0:
        return system.sign * float(w @ ev.interior / w.sum())
    return system.sign * float(ev.interior.mean())


# ---------------------------------------------------------------------------
# Continuation
# ---------------------------------------------------------------------------


def _record(state: SolveState, step: float) -> dict:
    entry = state.summary()
    entry["step"] = step
    return entry


def _continuation(
    system: DiscreteSystem, problem: ProblemSpec, seed: np.ndarray, label: str
) -> SolveState:
    tol, ctl = problem.tolerances, problem.homotopy
    u0 = seed - mean_value(system.grid, seed)
    c0 = _initial_c(system, u0, 0.0)
    start = _refresh(system, SolveState(u=ScalarField(system.grid, u0), c=c0, t=0.0))
    if not start.valid:
        raise ContinuationFailure(
            f"{label}: initial guess is not uniformly convex "
            f"(min eigenvalue {start.min_hessian_eig:.4g} at node {start.worst_node})",
            last_good_t=None,
        )

    try:
        state = newton_solve(system, start, tol)
    except (ConvexityBreakdown, NewtonStall, ProjectionError) as exc:
        raise ContinuationFailure(
            f"{label}: the t=0 problem did not converge: {exc}", last_good_t=None
        ) from exc
    path = [_record(state, 0.0)]
    logger.info(
        f"{label}: t=0 c={state.c:.12g} iters={state.newton_iters} "
        f"res={state.residual_max:.2e} min_eig={state.min_hessian_eig:.4g}"
    )

    if problem.f.is_zero:
        state.t = 1.0
        state.path = path + [_record(state, 1.0)]
        return state

    dt = ctl.initial_step
    steps = 0
    while state.t < 1.0:
        steps += 1
        if steps > ctl.max_steps:
            raise ContinuationFailure(
                f"{label}: homotopy exceeded {ctl.max_steps} steps at t={state.t:.6g}",
                last_good_t=state.t,
                state=state,
            )
        t_next = min(1.0, state.t + dt)
        trial = _refresh(system, replace(state, t=t_next))
        try:
            trial = newton_solve(system, trial, tol)
        except (ConvexityBreakdown, NewtonStall, ProjectionError) as exc:
            dt *= 0.5
            logger.debug(f"{label}: step to t={t_next:.6g} failed ({exc}); dt -> {dt:.4g}")
            if dt < ctl.min_step:
                raise ContinuationFailure(
                    f"{label}: continuity path failure; step fell below {ctl.min_step:.4g} "
                    f"after last good t={state.t:.6g}",
                    last_good_t=state.t,
                    state=state,
                ) from exc
            continue

        accepted_dt = t_next - state.t
        state = trial
        path.append(_record(state, accepted_dt))
        logger.info(
            f"{label}: t={state.t:.6g} c={state.c:.12g} iters={state.newton_iters} "
            f"res={state.residual_max:.2e} min_eig={state.min_hessian_eig:.4g}"
        )
        if not system.dual:
            low, high = c_bracket(problem, state.t)
            if not low <= state.c <= high:
                logger.warning(f"{label}: c={state.c:.6g} outside [{low:.6g}, {high:.6g}]")
        if state.newton_iters <= ctl.fast_iterations:
            dt *= ctl.growth

    state.path = path
    return state


def continuity_solve(problem: ProblemSpec, seed: Optional[ScalarField] = None) -> SolveState:
    """Solve from t = 0 to t = 1, warm-starting each stage.

    Raises:
        AdmissibilityError: if f is not admissible.
        ContinuationFailure: if the adaptive step in t falls below its minimum.
    """
    validate_f(problem.f, problem.grid, problem.operator, problem.theta0)
    system = primal_system(problem)
    if seed is None:
        seed = initial_guess(problem.source, problem.target, problem.grid)
    return _continuation(system, problem, seed.values, "primal")


def solve_dual(problem: ProblemSpec, primal: SolveState) -> SolveState:
    """Independent solve of the Legendre-dual problem on the target domain.

    Its constant is the recovered c and should agree with `primal.c`.
    """
    system = dual_system(problem)
    seed = initial_guess(problem.target, problem.source, problem.dual_grid)
    state = _continuation(system, problem, seed.values, "dual")
    gap = abs(state.c - primal.c)
    logger.info(f"dual: c={state.c:.12g} (primal {primal.c:.12g}, gap {gap:.3e})")
    return state
