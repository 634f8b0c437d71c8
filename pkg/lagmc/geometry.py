"""
lagmc.geometry — smooth uniformly convex planar domains and their defining functions.

Every domain is stored as a radial function R(theta) about an origin, so the
boundary is gamma(t) = origin + R(t) (cos t, sin t). Disks and ellipses use
closed forms; `make_smooth_convex` takes a Fourier series for R.

The defining function is h = d - (k/2) d^2 with d the signed interior distance
to the boundary, which gives |Dh| = 1 on the boundary and D^2 h <= -theta I for
a suitable concavity boost k.

Usage:
    disk = make_disk((0.0, 0.0), 2.0)
    h = defining_function(disk)
    h.value([[0.0, 0.0]])      # array([1.0])
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np

from lagmc.errors import GeometryError, ProjectionError

logger = logging.getLogger("lagmc.geometry")

CURVATURE_SAMPLES = 4096
PROJECTION_SEEDS = 8
PROJECTION_MAX_ITER = 50
PROJECTION_MAX_STEP = 0.5


class ShapeKind(Enum):
    DISK = "disk"
    ELLIPSE = "ellipse"
    FOURIER = "fourier"


# ---------------------------------------------------------------------------
# Radial functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiskRadius:
    radius: float

    def __call__(self, theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        theta = np.asarray(theta, dtype=float)
        full = np.full_like(theta, self.radius)
        return full, np.zeros_like(theta), np.zeros_like(theta)


@dataclass(frozen=True)
class EllipseRadius:
    """R(theta) = q^{-1/2} with q = cos^2(psi)/A^2 + sin^2(psi)/B^2, psi = theta - rotation."""

    semi_major: float
    semi_minor: float
    rotation: float = 0.0

    def __call__(self, theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        psi = np.asarray(theta, dtype=float) - self.rotation
        inv_a2 = 1.0 / self.semi_major**2
        inv_b2 = 1.0 / self.semi_minor**2
        q = inv_a2 * np.cos(psi) ** 2 + inv_b2 * np.sin(psi) ** 2
        dq = (inv_b2 - inv_a2) * np.sin(2.0 * psi)
        d2q = 2.0 * (inv_b2 - inv_a2) * np.cos(2.0 * psi)
        r = q**-0.5
        dr = -0.5 * q**-1.5 * dq
        d2r = 0.75 * q**-2.5 * dq * dq - 0.5 * q**-1.5 * d2q
        return r, dr, d2r


@dataclass(frozen=True)
class FourierRadius:
    """R(theta) = r0 + sum_k (a_k cos k theta + b_k sin k theta)."""

    mean_radius: float
    harmonics: Tuple[Tuple[int, float, float], ...] = ()

    def __call__(self, theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        theta = np.asarray(theta, dtype=float)
        r = np.full_like(theta, self.mean_radius)
        dr = np.zeros_like(theta)
        d2r = np.zeros_like(theta)
        for k, a_k, b_k in self.harmonics:
            c, s = np.cos(k * theta), np.sin(k * theta)
            r += a_k * c + b_k * s
            dr += k * (b_k * c - a_k * s)
            d2r -= k * k * (a_k * c + b_k * s)
        return r, dr, d2r


# ---------------------------------------------------------------------------
# Domain
# ---------------------------------------------------------------------------


def _unit(theta: np.ndarray) -> np.ndarray:
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1)


def _unit_perp(theta: np.ndarray) -> np.ndarray:
    return np.stack([-np.sin(theta), np.cos(theta)], axis=-1)


def radial_curvature(r: np.ndarray, dr: np.ndarray, d2r: np.ndarray) -> np.ndarray:
    return (r * r + 2.0 * dr * dr - r * d2r) / (r * r + dr * dr) ** 1.5


@dataclass(frozen=True)
class ConvexDomain:
    """A smooth uniformly convex domain, star-shaped about `origin`.

    `center` is the barycenter. `second_moments` is the covariance matrix of the
    uniform distribution on the domain, used to moment-match initial guesses.
    """

    kind: ShapeKind
    origin: np.ndarray
    radial: object
    curvature_min: float
    area: float
    center: np.ndarray
    second_moments: np.ndarray
    max_radius: float
    description: dict = field(default_factory=dict)

    def radius(self, theta) -> np.ndarray:
        return self.radial(theta)[0]

    def point(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        r, _, _ = self.radial(t)
        return self.origin + r[..., None] * _unit(t)

    def tangent(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        r, dr, _ = self.radial(t)
        return dr[..., None] * _unit(t) + r[..., None] * _unit_perp(t)

    def _second_derivative(self, t: np.ndarray) -> np.ndarray:
        r, dr, d2r = self.radial(t)
        return (d2r - r)[..., None] * _unit(t) + (2.0 * dr)[..., None] * _unit_perp(t)

    def curvature(self, t) -> np.ndarray:
        return radial_curvature(*self.radial(np.asarray(t, dtype=float)))

    def normal(self, t) -> np.ndarray:
        """Unit inward normal at parameter t (the tangent turned left)."""
        tan = self.tangent(t)
        inward = np.stack([-tan[..., 1], tan[..., 0]], axis=-1)
        return inward / np.linalg.norm(inward, axis=-1, keepdims=True)

    def polar(self, p) -> Tuple[np.ndarray, np.ndarray]:
        """Return (theta, rho) of points p, rho = |p - origin| / R(theta)."""
        rel = np.asarray(p, dtype=float) - self.origin
        theta = np.mod(np.arctan2(rel[..., 1], rel[..., 0]), 2.0 * math.pi)
        return theta, np.linalg.norm(rel, axis=-1) / self.radius(theta)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "area": self.area,
            "curvature_min": self.curvature_min,
            "center": [float(v) for v in self.center],
            **self.description,
        }


def _build_domain(kind: ShapeKind, origin, radial, description: dict) -> ConvexDomain:
    origin = np.asarray(origin, dtype=float).reshape(2)
    t = np.linspace(0.0, 2.0 * math.pi, CURVATURE_SAMPLES, endpoint=False)
    r, dr, d2r = radial(t)
    if np.any(r <= 0.0):
        bad = int(np.argmin(r))
        raise GeometryError(
            f"radial function is not positive at t={t[bad]:.6f} (R={r[bad]:.6g}); "
            f"the domain is not star-shaped about its origin",
            parameter=float(t[bad]),
        )
    kappa = radial_curvature(r, dr, d2r)
    worst = int(np.argmin(kappa))
    if kappa[worst] <= 0.0:
        raise GeometryError(
            f"boundary curvature {kappa[worst]:.6g} <= 0 at t={t[worst]:.6f}; "
            f"the domain is not uniformly convex",
            parameter=float(t[worst]),
        )

    # periodic trapezoid rule, spectrally accurate for smooth R
    dt = 2.0 * math.pi / CURVATURE_SAMPLES
    e = _unit(t)
    area = 0.5 * float(np.sum(r * r)) * dt
    first = (r**3 / 3.0)[:, None] * e
    offset = first.sum(axis=0) * dt / area
    outer = np.einsum("k,ki,kj->ij", r**4 / 4.0, e, e) * dt
    moments = outer / area - np.outer(offset, offset)

    domain = ConvexDomain(
        kind=kind,
        origin=origin,
        radial=radial,
        curvature_min=float(kappa[worst]),
        area=area,
        center=origin + offset,
        second_moments=moments,
        max_radius=float(r.max()),
        description=description,
    )
    logger.debug(
        f"built {kind.value} domain: area={area:.6g}, curvature_min={domain.curvature_min:.6g}"
    )
    return domain


def make_disk(center: Sequence[float], radius: float) -> ConvexDomain:
    if not radius > 0.0:
        raise GeometryError(f"disk radius must be positive, got {radius}")
    return _build_domain(
        ShapeKind.DISK,
        center,
        DiskRadius(float(radius)),
        {"radius": float(radius)},
    )


def make_ellipse(
    center: Sequence[float], semi_axes: Sequence[float], rotation: float = 0.0
) -> ConvexDomain:
    a, b = (float(v) for v in semi_axes)
    if not (a > 0.0 and b > 0.0):
        raise GeometryError(f"ellipse semi-axes must be positive, got ({a}, {b})")
    return _build_domain(
        ShapeKind.ELLIPSE,
        center,
        EllipseRadius(a, b, float(rotation)),
        {"semi_axes": [a, b], "rotation": float(rotation)},
    )


def make_smooth_convex(
    mean_radius: float,
    harmonics: Sequence[Sequence[float]] = (),
    center: Sequence[float] = (0.0, 0.0),
) -> ConvexDomain:
    """Domain with R(theta) = r0 + sum a_k cos(k theta) + b_k sin(k theta).

    `harmonics` is a sequence of (k, a_k, b_k). Raises GeometryError when the
    perturbation destroys uniform convexity.
    """
    if not mean_radius > 0.0:
        raise GeometryError(f"mean radius must be positive, got {mean_radius}")
    terms = []
    for entry in harmonics:
        k, a_k, b_k = entry
        if int(k) != k or k < 1:
            raise GeometryError(f"harmonic order must be a positive integer, got {k}")
        terms.append((int(k), float(a_k), float(b_k)))
    return _build_domain(
        ShapeKind.FOURIER,
        center,
        FourierRadius(float(mean_radius), tuple(terms)),
        {"mean_radius": float(mean_radius), "harmonics": [list(t) for t in terms]},
    )


def theta0(source: ConvexDomain, target: ConvexDomain, n: int = 2) -> float:
    """Theta_0 = (|target| / |source|)^(1/n)."""
    return (target.area / source.area) ** (1.0 / n)


def contains(domain: ConvexDomain, p) -> np.ndarray:
    """Closed-domain membership via the radial test |p - origin| <= R(theta_p)."""
    _, rho = domain.polar(p)
    return rho <= 1.0


# ---------------------------------------------------------------------------
# Projection
# ---------------------------------------------------------------------------


def _project(domain: ConvexDomain, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized multistart Newton on t -> |gamma(t) - p|^2 / 2. Returns (t, distance)."""
    m = points.shape[0]
    theta_p, _ = domain.polar(points)
    seeds = np.linspace(0.0, 2.0 * math.pi, PROJECTION_SEEDS, endpoint=False)
    t = np.concatenate([np.broadcast_to(seeds, (m, PROJECTION_SEEDS)), theta_p[:, None]], axis=1)
    p = points[:, None, :]

    converged = np.zeros_like(t, dtype=bool)
    for _ in range(PROJECTION_MAX_ITER):
        diff = domain.point(t) - p
        d1 = domain.tangent(t)
        d2 = domain._second_derivative(t)
        g = np.sum(diff * d1, axis=-1)
        speed2 = np.sum(d1 * d1, axis=-1)
        curv = speed2 + np.sum(diff * d2, axis=-1)
        # scaled gradient step where the objective is not locally convex
        step = np.where(curv > 0.0, -g / np.where(curv > 0.0, curv, 1.0), -g / speed2)
        step = np.clip(step, -PROJECTION_MAX_STEP, PROJECTION_MAX_STEP)
        t = t + np.where(converged, 0.0, step)
        converged |= np.abs(step) <= 1e-14 * (1.0 + np.abs(t))
        if converged.all():
            break

    dist = np.linalg.norm(domain.point(t) - p, axis=-1)
    dist = np.where(converged, dist, np.inf)
    best = np.argmin(dist, axis=1)
    rows = np.arange(m)
    failed = ~np.isfinite(dist[rows, best])
    if failed.any():
        raise ProjectionError(
            f"boundary projection did not converge in {PROJECTION_MAX_ITER} iterations "
            f"for {int(failed.sum())} point(s), first at {points[failed][0].tolist()}",
            points=points[failed],
        )
    return np.mod(t[rows, best], 2.0 * math.pi), dist[rows, best]


def project_to_boundary(domain: ConvexDomain, p) -> Tuple[np.ndarray, np.ndarray]:
    """Nearest boundary point(s) of p and the unsigned distance."""
    pts = np.asarray(p, dtype=float)
    flat = pts.reshape(-1, 2)
    t, dist = _project(domain, flat)
    foot = domain.point(t)
    return foot.reshape(pts.shape), dist.reshape(pts.shape[:-1])


def inward_normal(domain: ConvexDomain, boundary_point) -> np.ndarray:
    theta, _ = domain.polar(boundary_point)
    return domain.normal(theta)


# ---------------------------------------------------------------------------
# Defining function
# ---------------------------------------------------------------------------


def default_sample_points(
    domain: ConvexDomain, n_radial: int = 24, n_angular: int = 64
) -> np.ndarray:
    """Polar sample of the closed domain, boundary included."""
    theta = np.linspace(0.0, 2.0 * math.pi, n_angular, endpoint=False)
    rho = np.linspace(0.0, 1.0, n_radial)[1:]
    r = domain.radius(theta)
    pts = domain.origin + (rho[:, None, None] * r[None, :, None]) * _unit(theta)[None, :, :]
    return np.concatenate([domain.origin[None, :], pts.reshape(-1, 2)], axis=0)


@dataclass(frozen=True)
class DefiningFunction:
    """h = d - (k/2) d^2 on a convex domain, d the signed interior distance."""

    domain: ConvexDomain
    concavity_boost: float
    theta: float

    def evaluate(self, p) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (h, Dh, D^2h) at points p of shape (..., 2)."""
        pts = np.asarray(p, dtype=float)
        flat = pts.reshape(-1, 2)
        t, dist = _project(self.domain, flat)
        inside = contains(self.domain, flat)
        d = np.where(inside, dist, -dist)
        k = self.concavity_boost

        normal = self.domain.normal(t)
        tangent = np.stack([normal[:, 1], -normal[:, 0]], axis=-1)
        kappa = self.domain.curvature(t)

        grow = 1.0 - k * d
        focal = 1.0 - kappa * d
        # at a focal point with k = kappa both factors vanish; the ratio tends to k/kappa
        near = np.abs(focal) < 1e-12
        ratio = np.where(near, k / kappa, grow / np.where(near, 1.0, focal))

        h = d - 0.5 * k * d * d
        dh = grow[:, None] * normal
        d2h = -(ratio * kappa)[:, None, None] * np.einsum("ki,kj->kij", tangent, tangent)
        d2h -= k * np.einsum("ki,kj->kij", normal, normal)

        shape = pts.shape[:-1]
        return h.reshape(shape), dh.reshape(shape + (2,)), d2h.reshape(shape + (2, 2))

    def value(self, p) -> np.ndarray:
        return self.evaluate(p)[0]

    def gradient(self, p) -> np.ndarray:
        return self.evaluate(p)[1]

    def hessian(self, p) -> np.ndarray:
        return self.evaluate(p)[2]


def measure_concavity(domain: ConvexDomain, boost: float, samples: np.ndarray) -> float:
    """inf of -xi^T D^2h xi / |xi|^2 over the samples; closed form in (k, d, kappa)."""
    trial = DefiningFunction(domain, boost, theta=0.0)
    d2h = trial.hessian(samples)
    return float(-np.linalg.eigvalsh(d2h)[:, -1].max())


def defining_function(
    domain: ConvexDomain,
    concavity_boost: Optional[float] = None,
    samples: Optional[np.ndarray] = None,
) -> DefiningFunction:
    """Build h = d - (k/2) d^2 and measure its uniform concavity constant theta.

    The default boost is 1 / max R, which reproduces (R^2 - |p|^2) / (2R) on a disk.

    Raises:
        GeometryError: if the measured theta is not positive.
    """
    boost = 1.0 / domain.max_radius if concavity_boost is None else float(concavity_boost)
    if boost < 0.0:
        raise GeometryError(f"concavity_boost must be >= 0, got {boost}", parameter=boost)
    pts = default_sample_points(domain) if samples is None else np.asarray(samples, dtype=float)
    theta = measure_concavity(domain, boost, pts.reshape(-1, 2))
    if not theta > 0.0:
        raise GeometryError(
            f"defining function is not uniformly concave (measured theta={theta:.6g}) "
            f"with concavity_boost={boost:.6g}; use a positive boost below 1/inradius",
            parameter=boost,
        )
    logger.debug(f"defining function: boost={boost:.6g}, theta={theta:.6g}")
    return DefiningFunction(domain=domain, concavity_boost=boost, theta=theta)
