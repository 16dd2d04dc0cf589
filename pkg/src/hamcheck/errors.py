"""Exception types shared across the package."""


class HamcheckError(Exception):
    """Base class for all errors raised by hamcheck."""


class DimensionMismatchError(HamcheckError):
    """Vector arguments do not share the expected dimension."""


class DomainError(HamcheckError):
    """A point or control lies outside its declared domain."""


class AmbiguousRegionError(HamcheckError):
    """Evaluation requested exactly on a switching surface without a side."""


class DivergenceError(HamcheckError):
    """An integrated trajectory blew up before the end of the horizon."""


class DomainExitError(HamcheckError):
    """The flow left the problem domain; carries the exit time."""

    def __init__(self, message: str, exit_time: float):
        super().__init__(message)
        self.exit_time = exit_time


class TangentialCrossingError(HamcheckError):
    """A switching surface was hit with near-zero normal velocity."""


class OutOfHullError(HamcheckError):
    """Interpolation was requested outside the computed sheet hull."""


class InversionError(HamcheckError):
    """Newton inversion of the base projection failed to converge."""


class NonsmoothHessianError(HamcheckError):
    """A second derivative stencil straddles a flow-smoothness breakpoint."""


class CapabilityError(HamcheckError):
    """An operation requires a problem capability that is not declared."""


class DegenerateHorizonError(HamcheckError):
    """The reference horizon is empty or numerically zero."""


class ConfigError(HamcheckError):
    """A run configuration failed validation."""
