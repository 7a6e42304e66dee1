"""Exception types shared across the package."""


class IPPError(Exception):
    """Base class for all planner errors."""


class InvalidArgument(IPPError, ValueError):
    """An argument violates a documented precondition."""


class DegeneratePath(IPPError, ValueError):
    """A path has zero length where a positive length is required."""


class NumericalFailure(IPPError, ArithmeticError):
    """A covariance factorization failed even after jitter escalation."""


class InfeasibleConstraint(IPPError):
    """The routing constraints cannot be met by any path."""


class ResourceLimit(IPPError):
    """The requested problem is too large for dense computation."""
