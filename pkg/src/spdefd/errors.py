"""Exception types raised across the package."""


class SpdeError(Exception):
    """Base class for all package errors."""


class DomainError(SpdeError, ValueError):
    """An argument lies outside the domain of an operation."""


class InvalidStencilError(DomainError):
    pass


class NestingError(SpdeError):
    """A coarse grid point is missing from the fine grid."""


class NotParabolicError(SpdeError):
    def __init__(self, message, witness=None, eigenvalue=None):
        super().__init__(message)
        self.witness = witness
        self.eigenvalue = eigenvalue


class NonConvergenceError(SpdeError):
    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class StepFailure(SpdeError):
    """Raised when an implicit Euler step cannot be completed (usually tau too large)."""

    def __init__(self, step, residual, message=None):
        super().__init__(message or f"step {step} failed (residual {residual:.3e}); tau may be too large")
        self.step = step
        self.residual = residual


class InversionError(SpdeError):
    pass


class BlowUpError(SpdeError):
    pass


class ConfigError(SpdeError):
    pass
