"""
lagmc — solver and verifier for the second boundary value problem of the
Lagrangian mean curvature equation.

Given two smooth uniformly convex planar domains and a concave right-hand
side f, lagmc computes a uniformly convex potential u and the constant c with
F_tau(lambda(D^2 u)) = f + c and Du(source) = target, then certifies the
structural properties of the solution numerically: obliqueness, pinching,
Legendre duality, the mean curvature identity and uniqueness up to a constant.
"""

__version__ = "0.3.0"
__author__ = "Weber Gouin"
__email__ = "weberg619@gmail.com"
__license__ = "MIT"

__all__ = ["__version__", "__author__", "__email__", "__license__"]
