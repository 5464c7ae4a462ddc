"""Exception types raised across the package."""


class LiftError(Exception):
    """Base class for calibration errors."""


class UnsupportedDimensionError(LiftError, ValueError):
    pass


class InvalidStateError(LiftError, ValueError):
    pass


class InvalidOperatorError(LiftError, ValueError):
    pass


class ShapeError(LiftError, ValueError):
    pass


class ConfigurationError(LiftError, ValueError):
    pass


class InsufficientDataError(LiftError, ValueError):
    pass


class InfeasibleReferenceError(LiftError):
    """The reference does not satisfy the model dynamics it claims to."""


class ResetError(LiftError):
    """A rollout did not start from the configured initial state."""


class QocConvergenceError(LiftError, RuntimeError):
    def __init__(self, message, best_infidelity, best_controls=None):
        super().__init__(message)
        self.best_infidelity = best_infidelity
        self.best_controls = best_controls
