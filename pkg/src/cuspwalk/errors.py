"""Exception hierarchy.

Two families matter to callers: :class:`ValidationError` (bad input, bad
configuration, violated hypotheses) and :class:`NumericalError` (a solver or
quadrature that did not deliver).  The command line maps them to exit codes
2 and 3 respectively.
"""

from __future__ import annotations


class CuspwalkError(Exception):
    """Base class for all package errors."""


class ValidationError(CuspwalkError, ValueError):
    """Rejected input.  ``path`` locates the offending field when known."""

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class AssumptionViolation(ValidationError):
    """The domain does not satisfy the cusp sharpness condition 0 < gamma < 2."""


class NumericalError(CuspwalkError, RuntimeError):
    """A numerical procedure failed (non-convergence, inconsistent assembly)."""


class AssemblyError(NumericalError):
    """Operator assembly produced inconsistent rejection masses."""


class ConvergenceError(NumericalError):
    """An iterative solver did not converge."""

    def __init__(self, message: str, iterations: int | None = None, residual: float | None = None):
        self.iterations = iterations
        self.residual = residual
        extra = []
        if iterations is not None:
            extra.append(f"iterations={iterations}")
        if residual is not None:
            extra.append(f"residual={residual:.3e}")
        if extra:
            message = f"{message} ({', '.join(extra)})"
        super().__init__(message)
