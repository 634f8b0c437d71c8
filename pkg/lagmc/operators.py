"""
lagmc.operators — the F_tau operator family and its Legendre dual.

F_tau(lambda) is a sum over Hessian eigenvalues of one scalar summand phi:

    tau = 0               (1/n) ln(lam)                          experimental
    0 < tau < pi/4        sqrt(a^2+1)/(2b) ln((lam+a-b)/(lam+a+b))
    tau = pi/4            -sqrt(2)/(1+lam)
    pi/4 < tau < pi/2     sqrt(a^2+1)/b arctan((lam+a-b)/(lam+a+b))
    tau = pi/2            arctan(lam)

with a = cot(tau), b = sqrt(|cot^2(tau) - 1|). All functions here are pure
and vectorized over a trailing eigenvalue axis, so a whole grid of
eigenvalue pairs can be evaluated in one call.

Usage:
    params = OperatorParams(tau=math.pi / 2)
    eval_F(params, [1.0, 1.0])          # pi/2
    grad_F(params, [0.0, 0.0], closed=True)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Tuple, Union

import numpy as np
from scipy.stats import qmc

from lagmc.discretization import eig2
from lagmc.errors import OperatorDomainError

ArrayLike = Union[float, np.ndarray, list, tuple]

# |tau - pi/4| below this uses the Harmonic summand; the quotient forms are 0/0 there.
SEAM_TOLERANCE = 1e-8
# cot(pi/2) is 6e-17 in floating point; snap to the exact Arctan branch.
RIGHT_ANGLE_TOLERANCE = 1e-12


class Branch(Enum):
    LOG_QUOTIENT = "log_quotient"  # 0 < tau < pi/4
    HARMONIC = "harmonic"  # tau = pi/4
    ARCTAN_QUOTIENT = "arctan_quotient"  # pi/4 < tau < pi/2
    ARCTAN = "arctan"  # tau = pi/2
    EXPERIMENTAL_LOG_DET = "experimental_log_det"  # tau = 0


def select_branch(tau: float, experimental: bool = False) -> Branch:
    """Map tau to its branch, snapping to pi/4 and pi/2 within tolerance."""
    if not math.isfinite(tau):
        raise OperatorDomainError(f"tau must be finite, got {tau}", value=tau)
    if tau == 0.0:
        if not experimental:
            raise OperatorDomainError(
                "tau = 0 is the log-det (Monge-Ampere) branch; pass experimental=True to use it",
                value=tau,
            )
        return Branch.EXPERIMENTAL_LOG_DET
    if tau < 0.0 or tau > math.pi / 2 + RIGHT_ANGLE_TOLERANCE:
        raise OperatorDomainError(f"tau must lie in (0, pi/2], got {tau}", value=tau)
    if abs(tau - math.pi / 4) <= SEAM_TOLERANCE:
        return Branch.HARMONIC
    if abs(tau - math.pi / 2) <= RIGHT_ANGLE_TOLERANCE:
        return Branch.ARCTAN
    return Branch.LOG_QUOTIENT if tau < math.pi / 4 else Branch.ARCTAN_QUOTIENT


@dataclass(frozen=True)
class OperatorParams:
    """The tau-branch descriptor: angle, dimension and derived a, b."""

    tau: float
    n: int = 2
    experimental: bool = False
    a: float = field(init=False)
    b: float = field(init=False)
    branch: Branch = field(init=False)

    def __post_init__(self):
        if self.n < 1:
            raise OperatorDomainError(f"dimension n must be >= 1, got {self.n}", value=self.n)
        branch = select_branch(self.tau, self.experimental)
        if branch is Branch.HARMONIC:
            a, b = 1.0, 0.0
        elif branch is Branch.ARCTAN:
            a, b = 0.0, 1.0
        elif branch is Branch.EXPERIMENTAL_LOG_DET:
            a, b = math.inf, math.inf
        else:
            a = 1.0 / math.tan(self.tau)
            b = math.sqrt(abs(a * a - 1.0))
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "branch", branch)

    @property
    def scale(self) -> float:
        """sqrt(a^2 + 1), the common prefactor of the quotient branches."""
        return math.sqrt(self.a * self.a + 1.0)

    def with_tau(self, tau: float) -> "OperatorParams":
        return OperatorParams(tau=tau, n=self.n, experimental=self.experimental)


@dataclass(frozen=True)
class SpectrumPoint:
    """Eigenvalues of a Hessian; entries must be positive (closure allowed on request)."""

    lambdas: np.ndarray
    closed: bool = False

    def __post_init__(self):
        lams = np.asarray(self.lambdas, dtype=float)
        object.__setattr__(self, "lambdas", lams)
        _check_cone(lams, self.closed)


@dataclass(frozen=True)
class StructureBounds:
    """Lambda-sandwich for Gamma+_{]s1,s2[}: lambda1 <= both sums <= lambda2."""

    lambda1: float
    lambda2: float
    s1: float
    s2: float
    grad_interval: Tuple[float, float] = (0.0, 0.0)
    weighted_interval: Tuple[float, float] = (0.0, 0.0)


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _lambdas(point) -> np.ndarray:
    if isinstance(point, SpectrumPoint):
        return point.lambdas
    return np.asarray(point, dtype=float)


def _check_cone(lams: np.ndarray, closed: bool) -> None:
    if lams.size == 0:
        return
    if not np.all(np.isfinite(lams)):
        raise OperatorDomainError("eigenvalues must be finite", value=float(np.nanmin(lams)))
    low = float(lams.min())
    if low < 0.0 or (low == 0.0 and not closed):
        bound = "closure of Gamma+ (lam >= 0)" if closed else "Gamma+ (lam > 0)"
        raise OperatorDomainError(f"eigenvalue {low:.6g} lies outside {bound}", value=low)


def _phi(params: OperatorParams, lam: np.ndarray) -> np.ndarray:
    branch = params.branch
    if branch is Branch.ARCTAN:
        return np.arctan(lam)
    if branch is Branch.HARMONIC:
        return -math.sqrt(2.0) / (1.0 + lam)
    if branch is Branch.LOG_QUOTIENT:
        # ln((x-b)/(x+b)) = -2 artanh(b/x), stable as b -> 0
        x = lam + params.a
        return -(params.scale / params.b) * np.arctanh(params.b / x)
    if branch is Branch.ARCTAN_QUOTIENT:
        x = lam + params.a
        return (params.scale / params.b) * np.arctan((x - params.b) / (x + params.b))
    return np.log(lam) / params.n


def _dphi(params: OperatorParams, lam: np.ndarray) -> np.ndarray:
    branch = params.branch
    if branch is Branch.ARCTAN:
        return 1.0 / (1.0 + lam * lam)
    if branch is Branch.HARMONIC:
        return math.sqrt(2.0) / (1.0 + lam) ** 2
    if branch is Branch.LOG_QUOTIENT:
        x = lam + params.a
        return params.scale / (x * x - params.b * params.b)
    if branch is Branch.ARCTAN_QUOTIENT:
        x = lam + params.a
        return params.scale / (x * x + params.b * params.b)
    return 1.0 / (params.n * lam)


def _d2phi(params: OperatorParams, lam: np.ndarray) -> np.ndarray:
    branch = params.branch
    if branch is Branch.ARCTAN:
        return -2.0 * lam / (1.0 + lam * lam) ** 2
    if branch is Branch.HARMONIC:
        return -2.0 * math.sqrt(2.0) / (1.0 + lam) ** 3
    if branch is Branch.LOG_QUOTIENT:
        x = lam + params.a
        return -2.0 * params.scale * x / (x * x - params.b * params.b) ** 2
    if branch is Branch.ARCTAN_QUOTIENT:
        x = lam + params.a
        return -2.0 * params.scale * x / (x * x + params.b * params.b) ** 2
    return -1.0 / (params.n * lam * lam)


def _require_bounded(params: OperatorParams, what: str) -> None:
    if params.branch is Branch.EXPERIMENTAL_LOG_DET:
        raise OperatorDomainError(f"{what} is unbounded for the experimental log-det branch")


def phi_at_zero(params: OperatorParams) -> float:
    """Closed-form summand at lam = 0."""
    _require_bounded(params, "phi(0)")
    branch = params.branch
    if branch is Branch.ARCTAN:
        return 0.0
    if branch is Branch.HARMONIC:
        return -math.sqrt(2.0)
    a, b = params.a, params.b
    if branch is Branch.LOG_QUOTIENT:
        return params.scale / (2.0 * b) * math.log((a - b) / (a + b))
    return params.scale / b * math.atan((a - b) / (a + b))


def phi_at_infinity(params: OperatorParams) -> float:
    """Closed-form summand as lam -> +infinity."""
    _require_bounded(params, "phi(+inf)")
    branch = params.branch
    if branch is Branch.ARCTAN:
        return math.pi / 2.0
    if branch is Branch.ARCTAN_QUOTIENT:
        return math.pi * params.scale / (4.0 * params.b)
    return 0.0


def weighted_limit(params: OperatorParams) -> float:
    """lim lam^2 phi'(lam) as lam -> +infinity; equals sqrt(a^2 + 1) on every bounded branch."""
    _require_bounded(params, "lam^2 phi'(lam)")
    if params.branch is Branch.ARCTAN:
        return 1.0
    if params.branch is Branch.HARMONIC:
        return math.sqrt(2.0)
    return params.scale


def seam_offset(params: OperatorParams) -> float:
    """Additive constant separating the ArctanQuotient normalization from the pi/4 limit.

    For pi/4 < tau < pi/2 the summand tends to -sqrt(2)/(1+lam) + pi*sqrt(a^2+1)/(4b)
    as tau -> pi/4; the constant diverges and is absorbed into c.
    """
    if params.branch is Branch.ARCTAN_QUOTIENT:
        return math.pi * params.scale / (4.0 * params.b)
    return 0.0


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------


def scalar_phi(params: OperatorParams, lam: ArrayLike, limit: bool = False) -> np.ndarray:
    """Per-eigenvalue summand of F_tau. `limit=True` also accepts lam = 0."""
    lams = np.asarray(lam, dtype=float)
    if params.branch is Branch.EXPERIMENTAL_LOG_DET:
        limit = False
    _check_cone(lams, closed=limit)
    out = _phi(params, lams)
    return float(out) if out.ndim == 0 else out


def eval_F(params: OperatorParams, point, closed: bool = False):
    """F_tau at one eigenvalue vector, or a stack of them along the last axis."""
    lams = _lambdas(point)
    _check_cone(lams, closed and params.branch is not Branch.EXPERIMENTAL_LOG_DET)
    out = _phi(params, lams).sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def grad_F(params: OperatorParams, point, closed: bool = False) -> np.ndarray:
    lams = _lambdas(point)
    _check_cone(lams, closed and params.branch is not Branch.EXPERIMENTAL_LOG_DET)
    return _dphi(params, lams)


def hess_F_diag(params: OperatorParams, point, closed: bool = False) -> np.ndarray:
    """Diagonal of the eigenvalue Hessian; off-diagonal entries vanish for this family."""
    lams = _lambdas(point)
    _check_cone(lams, closed and params.branch is not Branch.EXPERIMENTAL_LOG_DET)
    return _d2phi(params, lams)


def limits(params: OperatorParams, n: int = None) -> Tuple[float, float]:
    """(F(0,...,0), F(+inf,...,+inf)) from the closed forms."""
    n = params.n if n is None else n
    return n * phi_at_zero(params), n * phi_at_infinity(params)


def dual_eval(params: OperatorParams, mus):
    """Legendre dual: F~(mu) = -F(1/mu)."""
    mu = _lambdas(mus)
    _check_cone(mu, closed=False)
    return -eval_F(params, 1.0 / mu)


def dual_grad(params: OperatorParams, mus) -> np.ndarray:
    """dF~/dmu_i = lam_i^2 dF/dlam_i with lam = 1/mu."""
    mu = _lambdas(mus)
    _check_cone(mu, closed=False)
    lam = 1.0 / mu
    return lam * lam * _dphi(params, lam)


def dual_hess_diag(params: OperatorParams, mus) -> np.ndarray:
    """d2F~/dmu_i^2 = -lam^3 (lam F'' + 2F') with lam = 1/mu."""
    mu = _lambdas(mus)
    _check_cone(mu, closed=False)
    lam = 1.0 / mu
    return -(lam**3) * (lam * _d2phi(params, lam) + 2.0 * _dphi(params, lam))


def range_bounds(params: OperatorParams, s1: float, s2: float, n: int = None) -> StructureBounds:
    """Closed-form Lambda interval for sum F' and sum F' lam^2 on Gamma+_{]s1,s2[}."""
    _require_bounded(params, "range_bounds")
    if s1 < 0.0 or s2 <= 0.0:
        raise OperatorDomainError(f"need s1 >= 0 and s2 > 0, got s1={s1}, s2={s2}")
    n = params.n if n is None else n
    grad_low = float(_dphi(params, np.float64(s1)))
    grad_high = n * float(_dphi(params, np.float64(0.0)))
    weighted_low = s2 * s2 * float(_dphi(params, np.float64(s2)))
    weighted_high = n * weighted_limit(params)
    return StructureBounds(
        lambda1=min(grad_low, weighted_low),
        lambda2=max(grad_high, weighted_high),
        s1=s1,
        s2=s2,
        grad_interval=(grad_low, grad_high),
        weighted_interval=(weighted_low, weighted_high),
    )


def dual_range_bounds(
    params: OperatorParams, s1: float, s2: float, n: int = None
) -> StructureBounds:
    """Lambda interval for F~ on Gamma+_{]1/s2, 1/s1[}.

    sum dF~/dmu = sum lam^2 F' and sum dF~/dmu mu^2 = sum F', so the dual sums are the
    primal sums with their roles exchanged on the reciprocal cone.
    """
    primal = range_bounds(params, s1, s2, n)
    return StructureBounds(
        lambda1=primal.lambda1,
        lambda2=primal.lambda2,
        s1=1.0 / s2,
        s2=math.inf if s1 == 0.0 else 1.0 / s1,
        grad_interval=primal.weighted_interval,
        weighted_interval=primal.grad_interval,
    )


def delta_max(params: OperatorParams, theta0: float, n: int = None) -> float:
    """min{F(+inf..) - F(theta0, +inf..), F(0.., theta0) - F(0..)}; independent of n."""
    if theta0 <= 0.0:
        raise OperatorDomainError(f"theta0 must be positive, got {theta0}", value=theta0)
    phi_theta = float(_phi(params, np.float64(theta0)))
    return min(phi_at_infinity(params) - phi_theta, phi_theta - phi_at_zero(params))


def sample_truncated_cone(s1: float, s2: float, n: int, samples: int, seed: int = 0) -> np.ndarray:
    """Scrambled Halton points of Gamma+_{]s1,s2[}: min <= s1, max >= s2.

    Coordinate 0 carries the small eigenvalue in (0, s1], coordinate 1 the large one in
    [s2, 1e3 s2] (log-spaced); remaining coordinates are log-spaced in [1e-3, 1e3].
    """
    sampler = qmc.Halton(d=max(n, 2), scramble=True, seed=seed)
    unit = np.clip(sampler.random(samples), 1e-12, 1.0)
    pts = np.empty((samples, n))
    low = s1 if s1 > 0.0 else 1e-3
    pts[:, 0] = low * unit[:, 0]
    if n > 1:
        pts[:, 1] = s2 * np.exp(unit[:, 1] * math.log(1e3))
    for k in range(2, n):
        pts[:, k] = np.exp((unit[:, k] - 0.5) * 2.0 * math.log(1e3))
    return pts


# ---------------------------------------------------------------------------
# Matrix arguments
# ---------------------------------------------------------------------------


def _eig3_values(A: np.ndarray) -> np.ndarray:
    """Trigonometric closed form for symmetric 3x3 eigenvalues, ascending."""
    q = np.trace(A, axis1=-2, axis2=-1) / 3.0
    eye = np.eye(3)
    shifted = A - q[..., None, None] * eye
    p = np.sqrt(np.maximum(np.sum(shifted * shifted, axis=(-2, -1)) / 6.0, 0.0))
    safe_p = np.where(p > 0.0, p, 1.0)
    r = np.linalg.det(shifted / safe_p[..., None, None]) / 2.0
    phi = np.arccos(np.clip(r, -1.0, 1.0)) / 3.0
    l1 = q + 2.0 * p * np.cos(phi)
    l3 = q + 2.0 * p * np.cos(phi + 2.0 * math.pi / 3.0)
    l2 = 3.0 * q - l1 - l3
    return np.stack([l3, l2, l1], axis=-1)


def _eigh(A: np.ndarray, vectors: bool):
    n = A.shape[-1]
    if n == 1:
        return A[..., 0, :], (np.ones_like(A) if vectors else None)
    if n == 2:
        lmin, lmax, rot = eig2(A)
        return np.stack([lmin, lmax], axis=-1), rot
    if n == 3:
        if vectors:
            return np.linalg.eigh(A)
        return _eig3_values(A), None
    raise OperatorDomainError(f"matrix operators support n <= 3, got n={n}")


def _as_matrix(params: OperatorParams, A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.shape[-1] != A.shape[-2]:
        raise OperatorDomainError(f"expected square matrices, got shape {A.shape}")
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def _require_positive(lams: np.ndarray) -> None:
    low = float(lams.min())
    if not low > 0.0:
        raise OperatorDomainError(
            f"matrix is not positive definite (minimum eigenvalue {low:.6g})", value=low
        )


def eval_F_matrix(params: OperatorParams, A):
    """F[A] := F(lambda(A)) for a symmetric positive definite A (or a stack)."""
    A = _as_matrix(params, A)
    lams, _ = _eigh(A, vectors=False)
    _require_positive(lams)
    return eval_F(params, lams)


def dF_matrix(params: OperatorParams, A) -> np.ndarray:
    """F^{ij} = dF/da_ij = Q diag(grad_F(lambda)) Q^T."""
    A = _as_matrix(params, A)
    lams, Q = _eigh(A, vectors=True)
    _require_positive(lams)
    g = _dphi(params, lams)
    return np.einsum("...ik,...k,...jk->...ij", Q, g, Q)


@dataclass(frozen=True)
class EigenvalueOperator:
    """F or its dual F~ applied to stacks of symmetric 2x2 Hessians.

    Used by the solver so the primal and dual problems share one assembly path.
    """

    params: OperatorParams
    dual: bool = False

    def summand(self, lams: np.ndarray) -> np.ndarray:
        if self.dual:
            return -_phi(self.params, 1.0 / lams)
        return _phi(self.params, lams)

    def derivative(self, lams: np.ndarray) -> np.ndarray:
        if self.dual:
            inv = 1.0 / lams
            return inv * inv * _dphi(self.params, inv)
        return _dphi(self.params, lams)

    def limits(self) -> Tuple[float, float]:
        low, high = limits(self.params)
        return (-high, -low) if self.dual else (low, high)

    def evaluate(self, hessians: np.ndarray):
        """Return (F values, dF matrices, ascending eigenvalues) for an (N, 2, 2) stack.

        Eigenvalues are returned even when some are non-positive; callers decide how to
        flag those nodes. F and dF are only meaningful where both eigenvalues are > 0.
        """
        lmin, lmax, Q = eig2(hessians)
        lams = np.stack([lmin, lmax], axis=-1)
        safe = np.where(lams > 0.0, lams, 1.0)
        values = self.summand(safe).sum(axis=-1)
        g = self.derivative(safe)
        dF = np.einsum("...ik,...k,...jk->...ij", Q, g, Q)
        return values, dF, lams
