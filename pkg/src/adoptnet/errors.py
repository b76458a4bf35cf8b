"""Exception hierarchy shared across the package."""


class AdoptNetError(Exception):
    """Base class for all package errors."""


class DimensionError(AdoptNetError, ValueError):
    """Layers or parameter vectors disagree on the community count."""


class PreconditionError(AdoptNetError, ValueError):
    """An operation was called with inputs outside its domain."""


class InfeasibleControlError(PreconditionError):
    """A control vector violates the box or budget constraint."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class NonConvergenceError(AdoptNetError, RuntimeError):
    """An iterative solver hit its iteration cap."""

    def __init__(self, message, last_residual=float("nan")):
        super().__init__(message)
        self.last_residual = last_residual
