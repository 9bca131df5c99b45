"""Exception types shared across the package."""


class QcmdError(Exception):
    """Base class for package errors."""


class CausticError(QcmdError):
    """A caustic was hit: the flow Jacobian (or the momentum field) vanished."""


class CrossingError(QcmdError):
    """An operation that requires a simple/gapped ground level met a degeneracy."""


class ResolutionError(QcmdError):
    """A grid or step count violates the resolution rule.

    Carries the minimum admissible value in ``required``.
    """

    def __init__(self, message, required=None):
        super().__init__(message)
        self.required = required


class HittingTimeError(QcmdError):
    """No return to the surface within the configured time cap."""


class BoundViolationError(QcmdError):
    """A run violated a bound it is contracted to satisfy (with MC slack)."""
