"""
lagmc.discretization — boundary-fitted polar grid, derivative stencils and quadrature.

Nodes sit at x(rho_i, theta_j) = origin + rho_i R(theta_j) (cos theta_j, sin theta_j)
with rho_i = i / (n_rho - 1). The pole (i = 0) is one shared node; every other
node has index 1 + (i - 1) n_theta + j, so the ring i = n_rho - 1 lies exactly
on the boundary.

Gradient and Hessian at every node come from a least-squares quadratic fit
over a small neighbour stencil, written in physical coordinates. The boundary
ring is one-sided, so its Hessian comes from a cubic fit over a wider stencil
instead. The fits are assembled once into sparse matrices, which makes
differentiation exact on quadratics and lets the solver use the same matrices
as its Jacobian blocks.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np
from scipy import sparse
from scipy.integrate import simpson

from lagmc.geometry import ConvexDomain

logger = logging.getLogger("lagmc.discretization")

MIN_RADIAL_NODES = 8
MIN_ANGULAR_NODES = 16


# ---------------------------------------------------------------------------
# 2x2 eigen-decomposition
# ---------------------------------------------------------------------------


def eig2(S) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Closed-form eigen-decomposition of symmetric 2x2 matrices (or a stack).

    Returns (lam_min, lam_max, Q) with Q diag(lam_min, lam_max) Q^T = S; the first
    column of Q is the lam_min eigenvector.
    """
    S = np.asarray(S, dtype=float)
    a = S[..., 0, 0]
    c = S[..., 1, 1]
    b = 0.5 * (S[..., 0, 1] + S[..., 1, 0])
    mid = 0.5 * (a + c)
    half = 0.5 * (a - c)
    disc = np.sqrt(np.maximum(half * half + b * b, 0.0))
    lam_min = mid - disc
    lam_max = mid + disc
    phi = 0.5 * np.arctan2(2.0 * b, a - c)
    cos, sin = np.cos(phi), np.sin(phi)
    Q = np.empty(S.shape)
    Q[..., 0, 0] = sin
    Q[..., 0, 1] = cos
    Q[..., 1, 0] = -cos
    Q[..., 1, 1] = sin
    return lam_min, lam_max, Q


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DifferentialOperators:
    """Sparse (N, N) derivative matrices: gradient and Hessian entries."""

    gx: sparse.csr_matrix
    gy: sparse.csr_matrix
    hxx: sparse.csr_matrix
    hxy: sparse.csr_matrix
    hyy: sparse.csr_matrix


@dataclass(frozen=True)
class MappedGrid:
    domain: ConvexDomain
    n_rho: int
    n_theta: int
    rho: np.ndarray
    theta: np.ndarray
    nodes: np.ndarray
    rho_index: np.ndarray
    theta_index: np.ndarray
    boundary_index: np.ndarray
    interior_index: np.ndarray
    jacobian: np.ndarray
    area_element: np.ndarray
    weights: np.ndarray
    operators: DifferentialOperators
    spacing: float

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    @property
    def area(self) -> float:
        return float(self.weights.sum())

    def node(self, i: int, j: int) -> int:
        if i == 0:
            return 0
        return 1 + (i - 1) * self.n_theta + (j % self.n_theta)

    def ring(self, i: int) -> np.ndarray:
        if i == 0:
            return np.array([0])
        return 1 + (i - 1) * self.n_theta + np.arange(self.n_theta)

    def as_polar_array(self, values: np.ndarray) -> np.ndarray:
        """Reshape nodal values to (n_rho, n_theta), repeating the pole value."""
        values = np.asarray(values)
        rest = values[1:].reshape((self.n_rho - 1, self.n_theta) + values.shape[1:])
        pole = np.broadcast_to(values[0], (1, self.n_theta) + values.shape[1:])
        return np.concatenate([pole, rest], axis=0)

    def metadata(self) -> dict:
        return {
            "n_rho": self.n_rho,
            "n_theta": self.n_theta,
            "nodes": self.size,
            "spacing": self.spacing,
            "area": self.area,
            "origin": [float(v) for v in self.domain.origin],
            "domain": self.domain.to_dict(),
        }


@dataclass(frozen=True)
class ScalarField:
    """Nodal values aligned with a MappedGrid."""

    grid: MappedGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.size,):
            raise ValueError(
                f"field has shape {values.shape}, grid expects ({self.grid.size},)"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", values)

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return ScalarField(self.grid, values)


def _stencils(n_rho: int, n_theta: int, node) -> Dict[str, Tuple[np.ndarray, np.ndarray]]:
    """Neighbour lists grouped by stencil shape: name -> (centres, neighbours)."""
    interior, boundary, boundary_hessian, first_ring = [], [], [], []
    last = n_rho - 1
    for i in range(1, n_rho):
        for j in range(n_theta):
            c = node(i, j)
            if i == 1:
                nbrs = [0, node(1, j - 1), node(1, j + 1), node(1, j - 2), node(1, j + 2)]
                nbrs += [node(2, j + dj) for dj in (-1, 0, 1)]
                first_ring.append((c, nbrs))
            elif i == last:
                nbrs = [node(i, j - 1), node(i, j + 1)]
                nbrs += [node(i - 1, j + dj) for dj in (-1, 0, 1)]
                nbrs += [node(i - 2, j + dj) for dj in (-1, 0, 1)]
                boundary.append((c, nbrs))
                wide = [node(i, j + dj) for dj in (-2, -1, 1, 2)]
                wide += [node(i - di, j + dj) for di in (1, 2) for dj in (-2, -1, 0, 1, 2)]
                wide += [node(i - 3, j + dj) for dj in (-1, 0, 1)]
                boundary_hessian.append((c, wide))
            else:
                nbrs = [node(i + di, j + dj) for di in (-1, 0, 1) for dj in (-1, 0, 1)]
                nbrs.remove(c)
                interior.append((c, nbrs))
    pole_nbrs = [node(i, j) for i in (1, 2) for j in range(n_theta)]
    groups = {"pole": [(0, pole_nbrs)], "first_ring": first_ring, "interior": interior}
    groups["boundary"] = boundary
    groups["boundary_hessian"] = boundary_hessian
    return {
        name: (np.array([c for c, _ in items]), np.array([n for _, n in items]))
        for name, items in groups.items()
    }


def _fit_weights(
    nodes: np.ndarray, centres: np.ndarray, nbrs: np.ndarray, degree: int = 2
) -> np.ndarray:
    """Least-squares polynomial fit weights, shape (m, 5, k) for derivatives
    (d/dx, d/dy, d2/dx2, d2/dxdy, d2/dy2) in terms of neighbour differences.

    degree=3 adds the cubic monomials to the fit so the second derivatives of
    one-sided stencils keep second order.
    """
    offsets = nodes[nbrs] - nodes[centres][:, None, :]
    scale = np.linalg.norm(offsets, axis=-1).max(axis=1)
    dx = offsets[..., 0] / scale[:, None]
    dy = offsets[..., 1] / scale[:, None]
    columns = [dx, dy, 0.5 * dx * dx, dx * dy, 0.5 * dy * dy]
    if degree == 3:
        columns += [dx**3 / 6.0, 0.5 * dx * dx * dy, 0.5 * dx * dy * dy, dy**3 / 6.0]
    rows = np.stack(columns, axis=-1)
    weights = np.linalg.pinv(rows)[:, :5, :]
    powers = np.array([1.0, 1.0, 2.0, 2.0, 2.0])
    return weights / scale[:, None, None] ** powers[None, :, None]


# group -> (fit degree, derivative rows it supplies); absent groups supply all five
_GROUP_FITS = {"boundary": (2, (0, 1)), "boundary_hessian": (3, (2, 3, 4))}


def _assemble(n: int, groups, nodes: np.ndarray) -> DifferentialOperators:
    rows = [[] for _ in range(5)]
    cols = [[] for _ in range(5)]
    data = [[] for _ in range(5)]
    for name, (centres, nbrs) in groups.items():
        degree, derivs = _GROUP_FITS.get(name, (2, range(5)))
        w = _fit_weights(nodes, centres, nbrs, degree)
        k = nbrs.shape[1]
        group_rows = np.repeat(centres, k + 1)
        group_cols = np.concatenate([nbrs, centres[:, None]], axis=1).ravel()
        for d in derivs:
            block = np.concatenate([w[:, d, :], -w[:, d, :].sum(axis=1, keepdims=True)], axis=1)
            rows[d].append(group_rows)
            cols[d].append(group_cols)
            data[d].append(block.ravel())
    mats = [
        sparse.csr_matrix(
            (np.concatenate(data[d]), (np.concatenate(rows[d]), np.concatenate(cols[d]))),
            shape=(n, n),
        )
        for d in range(5)
    ]
    return DifferentialOperators(*mats)


def build_grid(domain: ConvexDomain, n_rho: int, n_theta: int) -> MappedGrid:
    """Polar mapped grid of `domain` with least-squares derivative stencils.

    Raises:
        ValueError: if the resolution is below 8 x 16 or n_theta is odd.
    """
    if n_rho < MIN_RADIAL_NODES:
        raise ValueError(f"n_rho must be >= {MIN_RADIAL_NODES}, got {n_rho}")
    if n_theta < MIN_ANGULAR_NODES or n_theta % 2:
        raise ValueError(f"n_theta must be even and >= {MIN_ANGULAR_NODES}, got {n_theta}")

    rho = np.linspace(0.0, 1.0, n_rho)
    theta = 2.0 * math.pi * np.arange(n_theta) / n_theta
    r, dr, _ = domain.radial(theta)
    if np.any(r <= 0.0):
        raise ValueError("domain is not star-shaped about its origin")

    rho_index = np.concatenate([[0], np.repeat(np.arange(1, n_rho), n_theta)])
    theta_index = np.concatenate([[0], np.tile(np.arange(n_theta), n_rho - 1)])
    rho_n = rho[rho_index]
    th_n = theta[theta_index]
    r_n, dr_n = r[theta_index], dr[theta_index]
    e = np.stack([np.cos(th_n), np.sin(th_n)], axis=-1)
    e_perp = np.stack([-np.sin(th_n), np.cos(th_n)], axis=-1)
    nodes = domain.origin + (rho_n * r_n)[:, None] * e
    nodes[0] = domain.origin

    # columns: d x / d rho, d x / d theta
    jacobian = np.stack(
        [r_n[:, None] * e, rho_n[:, None] * (dr_n[:, None] * e + r_n[:, None] * e_perp)], axis=-1
    )
    area_element = rho_n * r_n * r_n

    rho_weights = simpson(np.eye(n_rho), x=rho, axis=0)
    weights = rho_weights[rho_index] * (2.0 * math.pi / n_theta) * area_element

    size = (n_rho - 1) * n_theta + 1

    def node(i: int, j: int) -> int:
        return 0 if i == 0 else 1 + (i - 1) * n_theta + (j % n_theta)

    operators = _assemble(size, _stencils(n_rho, n_theta, node), nodes)
    boundary_index = 1 + (n_rho - 2) * n_theta + np.arange(n_theta)
    interior_index = np.arange(boundary_index[0])
    spacing = float(r.max()) * max(1.0 / (n_rho - 1), 2.0 * math.pi / n_theta)

    logger.debug(f"grid {n_rho}x{n_theta}: {size} nodes, spacing {spacing:.4g}")
    return MappedGrid(
        domain=domain,
        n_rho=n_rho,
        n_theta=n_theta,
        rho=rho,
        theta=theta,
        nodes=nodes,
        rho_index=rho_index,
        theta_index=theta_index,
        boundary_index=boundary_index,
        interior_index=interior_index,
        jacobian=jacobian,
        area_element=area_element,
        weights=weights,
        operators=operators,
        spacing=spacing,
    )


# ---------------------------------------------------------------------------
# Differential operators
# ---------------------------------------------------------------------------


def _values(field) -> Tuple[MappedGrid, np.ndarray]:
    return field.grid, field.values


def gradient(field: ScalarField) -> np.ndarray:
    """(N, 2) gradient of a nodal field."""
    grid, u = _values(field)
    ops = grid.operators
    return np.stack([ops.gx @ u, ops.gy @ u], axis=-1)


def hessian_of(grid: MappedGrid, u: np.ndarray) -> np.ndarray:
    ops = grid.operators
    uxx, uxy, uyy = ops.hxx @ u, ops.hxy @ u, ops.hyy @ u
    return np.stack([np.stack([uxx, uxy], -1), np.stack([uxy, uyy], -1)], -2)


def hessian(field: ScalarField) -> np.ndarray:
    """(N, 2, 2) symmetric Hessian of a nodal field."""
    return hessian_of(*_values(field))


def third_derivatives(field: ScalarField, k: int) -> np.ndarray:
    """(N, 2, 2) array of u_{ijk} for direction k: the k-derivative of each Hessian entry."""
    if k not in (0, 1):
        raise ValueError(f"direction must be 0 or 1, got {k}")
    grid, u = _values(field)
    g = grid.operators.gx if k == 0 else grid.operators.gy
    hess = hessian_of(grid, u)
    out = np.empty_like(hess)
    out[:, 0, 0] = g @ hess[:, 0, 0]
    out[:, 1, 1] = g @ hess[:, 1, 1]
    out[:, 0, 1] = out[:, 1, 0] = g @ hess[:, 0, 1]
    return out


def integrate(field: ScalarField) -> float:
    """Tensor-product quadrature: Simpson in rho, trapezoid in theta, map Jacobian rho R^2."""
    grid, u = _values(field)
    return float(grid.weights @ u)


def integrate_values(grid: MappedGrid, values: np.ndarray) -> float:
    return float(grid.weights @ values)


def integrate_det_hessian(field: ScalarField) -> float:
    hess = hessian(field)
    det = hess[:, 0, 0] * hess[:, 1, 1] - hess[:, 0, 1] ** 2
    return integrate_values(field.grid, det)


def mean_value(grid: MappedGrid, values: np.ndarray) -> float:
    return float(grid.weights @ values) / grid.area
