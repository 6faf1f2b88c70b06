"""Exception and warning types raised across the package."""


class TwinQEError(Exception):
    """Base class for all package errors."""


class DomainError(TwinQEError, ValueError):
    """An argument lies outside the domain of a formula."""


class NoRealRootError(TwinQEError, ArithmeticError):
    pass


class NoAdmissibleRootError(TwinQEError, ArithmeticError):
    pass


class InsufficientDataError(TwinQEError, ValueError):
    """Too few pulses or clicks to form the requested statistic."""


class EmptyArmError(InsufficientDataError):
    pass


class NegativeSubtractionError(TwinQEError, ValueError):
    """Background subtraction left a negative variance or mean (bad noise run)."""


class DegeneratePointsError(TwinQEError, ValueError):
    pass


class ConfigError(TwinQEError, ValueError):
    """Configuration could not be parsed or validated.

    ``errors`` holds every problem found, each as ``(location, message)``.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        lines = [f"{loc}: {msg}" if loc else msg for loc, msg in self.errors]
        super().__init__("invalid configuration:\n  " + "\n  ".join(lines))


class CorruptRecordError(TwinQEError, IOError):
    pass


class DeadTimeValidityWarning(UserWarning):
    """Mean sum signal is beyond the range where the linear dead-time term holds."""
