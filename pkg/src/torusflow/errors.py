"""Exception types raised across the package."""


class TorusFlowError(Exception):
    """Base class for all package errors."""


class InvalidInputError(TorusFlowError, ValueError):
    """Malformed or out-of-domain arguments (non-finite values, bad shapes)."""


class GeometryError(TorusFlowError):
    """A geometric construction could not satisfy its separation constraints."""

    def __init__(self, message, best_separation=None):
        super().__init__(message)
        self.best_separation = best_separation


class SmoothnessError(TorusFlowError):
    """Requested field would not be C^1."""


class DomainError(TorusFlowError):
    """A fractional power was requested of a base that takes negative values."""


class PositivityError(TorusFlowError):
    """A function required to be positive has a nonpositive sample."""


class SignError(TorusFlowError):
    """A function required to be nonnegative has a negative sample."""


class IntegrationError(TorusFlowError):
    """The ODE integrator could not reach the requested time."""

    def __init__(self, message, t_reached=None):
        super().__init__(message)
        self.t_reached = t_reached


class ConsistencyError(TorusFlowError):
    """Input violates a consistency precondition (e.g. measure not invariant)."""


class ResolutionError(TorusFlowError):
    """Quadrature grid too coarse for the oscillation scale."""
