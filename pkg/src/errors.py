# relaxed-bubbles/src/errors.py
"""
Exception hierarchy shared by every solver module
"""

from typing import List, Optional, Sequence, Tuple


class BubbleSolverError(Exception):
    """Base class for all solver failures"""


class InvalidConfigError(BubbleSolverError, ValueError):
    """
    Raised when a configuration violates one or more invariants.

    Attributes:
        violations: list of (field path, message) pairs, one per violated invariant
    """

    def __init__(self, violations: Sequence[Tuple[str, str]]):
        self.violations: List[Tuple[str, str]] = list(violations)
        lines = [f"{path}: {message}" for path, message in self.violations]
        super().__init__("invalid configuration:\n  " + "\n  ".join(lines))


class CollapseError(BubbleSolverError):
    """A bubble radius reached zero (or the radius floor)"""


class DomainError(BubbleSolverError, ValueError):
    """A point or argument lies outside the domain of an operation"""


class DegeneracyError(BubbleSolverError):
    """Gram matrix singular, indefinite, or with a pivot below threshold"""


class ConvergenceError(BubbleSolverError):
    """An iteration (reflections, Newton, fixed point) did not converge"""

    def __init__(self, message: str, residual: Optional[float] = None):
        self.residual = residual
        if residual is not None:
            message = f"{message} (last residual {residual:.3e})"
        super().__init__(message)


class QuadratureError(BubbleSolverError):
    """A quadrature integrand returned a non-finite sample"""

    def __init__(self, message: str, location=None):
        self.location = location
        if location is not None:
            message = f"{message} at {location}"
        super().__init__(message)


class HorizonExceededError(BubbleSolverError):
    """Requested horizon exceeds the separation horizon without override"""
