"""Typed failures raised across the package.

Every numerical guard raises one of these instead of letting NaN or inf
propagate, so callers (and tests) can react to a specific failure mode.
"""


class RectflowError(Exception):
    """Base class for all package errors."""


class ParameterError(RectflowError, ValueError):
    """Invalid input parameter (shape, sign, range, symmetry...)."""


class DomainError(RectflowError, ValueError):
    """Point outside the domain on which the operation is defined."""


class InsufficientDataError(RectflowError, ValueError):
    """Too few observations for the requested statistic."""


class DegenerateTimeError(RectflowError, ValueError):
    """Endpoint time t in {0, 1} where the formula degenerates."""


class EndpointError(RectflowError, ValueError):
    """Time too close to an endpoint for an estimator with explicit 1/t factors."""


class EmptyBodyError(RectflowError, ValueError):
    """A geometric operation produced an empty convex body."""


class SingularityError(RectflowError, ArithmeticError):
    """A time-dependent matrix is singular at time ``t``."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class FarFieldError(RectflowError, ArithmeticError):
    """All mixture weights underflow, even in log-space."""


class EmptyWindowError(RectflowError, ArithmeticError):
    """Kernel (or density) denominator below the 1e-300 floor."""


class DegenerateRegionError(RectflowError, ArithmeticError):
    """Moment matrix of a boundary kernel is numerically singular."""


class IntegrationError(RectflowError, ArithmeticError):
    """Non-finite velocity met while integrating, at time ``t`` and state ``z``."""

    def __init__(self, message, t=None, z=None):
        super().__init__(message)
        self.t = t
        self.z = z


class FitError(RectflowError, ArithmeticError):
    """Linear fit failed (rank deficiency beyond the ridge jitter)."""


class ExperimentError(RectflowError, RuntimeError):
    """An experiment could not produce a valid result."""
