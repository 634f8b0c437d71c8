"""
lagmc.errors — exception types raised across the package.

Every error derives from LagmcError and from the builtin a caller would
naturally catch (ValueError for bad inputs, RuntimeError for numerical
breakdowns), so `except ValueError` keeps working for library users while
the CLI can map each family to its exit code.
"""

from __future__ import annotations

from typing import Any, Optional


class LagmcError(Exception):
    """Base class for all lagmc errors."""


class OperatorDomainError(LagmcError, ValueError):
    """An operator was evaluated outside the closed positive cone."""

    def __init__(self, message: str, value: Optional[float] = None):
        super().__init__(message)
        self.value = value


class GeometryError(LagmcError, ValueError):
    """A domain or defining function failed its construction checks."""

    def __init__(self, message: str, parameter: Optional[float] = None):
        super().__init__(message)
        self.parameter = parameter


class ProjectionError(LagmcError, RuntimeError):
    """Newton projection onto a boundary curve did not converge."""

    def __init__(self, message: str, points: Any = None):
        super().__init__(message)
        self.points = points


class AdmissibilityError(LagmcError, ValueError):
    """A right-hand side is not in the admissible class."""

    def __init__(self, message: str, node: Optional[int] = None, margin: Optional[float] = None):
        super().__init__(message)
        self.node = node
        self.margin = margin


class ConvexityBreakdown(LagmcError, RuntimeError):
    """No damped Newton step kept the iterate uniformly convex and decreasing."""

    def __init__(
        self, message: str, node: Optional[int] = None, min_eigenvalue: float = float("nan")
    ):
        super().__init__(message)
        self.node = node
        self.min_eigenvalue = min_eigenvalue


class NewtonStall(LagmcError, RuntimeError):
    """Newton iterations ran out before the residual tolerances were met."""


class ContinuationFailure(LagmcError, RuntimeError):
    """The homotopy step in t fell below its minimum."""

    def __init__(self, message: str, last_good_t: float = 0.0, state: Any = None):
        super().__init__(message)
        self.last_good_t = last_good_t
        self.state = state


class ConfigError(LagmcError, ValueError):
    """A run config failed to parse; carries the dotted key and YAML line."""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        location = ""
        if key is not None:
            location = f"'{key}'"
            if line is not None:
                location += f" (line {line})"
            location += ": "
        super().__init__(f"{location}{message}")
        self.key = key
        self.line = line
