"""Exception hierarchy shared across the package."""


class HHFusionError(Exception):
    """Base class for all package errors."""


class ShapeError(HHFusionError, ValueError):
    pass


class ConfigError(HHFusionError, ValueError):
    pass


class UsageError(HHFusionError, RuntimeError):
    pass


class DataError(HHFusionError, ValueError):
    pass


class InputError(HHFusionError, ValueError):
    pass


class StateError(HHFusionError, RuntimeError):
    pass


class InvariantViolation(HHFusionError, RuntimeError):
    pass


class SingularDirectionError(HHFusionError, ArithmeticError):
    """A reflection direction collapsed to (numerically) zero length."""

    def __init__(self, message, couple_index=None):
        super().__init__(message)
        self.couple_index = couple_index


class MissingArtifactError(HHFusionError, FileNotFoundError):
    pass
