"""Exception types raised across the package."""


class WplError(Exception):
    """Base class for all package errors."""


class DimensionError(WplError, ValueError):
    pass


class DomainError(WplError, ValueError):
    """A scalar parameter is outside its admissible range."""


class UnphysicalStateError(DomainError):
    pass


class CPTPViolationError(WplError, ValueError):
    """Kraus operators do not sum to the identity."""


class CircuitError(WplError, ValueError):
    pass


class NumericError(WplError, ArithmeticError):
    """Non-finite values or a kernel that failed to converge."""


class DesignDeficiencyError(WplError, ValueError):
    """Probe vectors do not span the space required by the fit."""


class IncompleteRecordError(WplError, KeyError):
    pass


class InvalidRecordError(WplError, ValueError):
    pass


class ConfigError(WplError, ValueError):
    pass


class SymmetryError(WplError, ValueError):
    pass


class CorrectionSingularError(WplError, ArithmeticError):
    """The Woodbury inner matrix is (numerically) singular."""
