"""Exception types shared across the library."""


class LabError(Exception):
    """Base class for all asiplab errors."""


class InvalidInputError(LabError, ValueError):
    """An argument violates a documented precondition."""


class SingularityError(LabError):
    """A matrix is numerically singular where invertibility is required."""


class CapabilityError(LabError):
    """The model does not support the requested operation."""


class SchemeError(LabError):
    """A block scheme cannot accommodate the requested construction."""


class InsufficientSignalError(LabError):
    """Too few grid points rise above the Monte Carlo noise floor."""


class InsufficientTailError(LabError):
    """Too few tail exceedances to fit a tail profile."""


class TailTruncationError(LabError):
    """A covariance tail sum could not be certified negligible.

    Carries the offending bound value so callers can report it.
    """

    def __init__(self, message: str, bound: float):
        super().__init__(f"{message} (certified bound {bound:.6g})")
        self.bound = bound


class NumericalError(LabError):
    """A numerical routine failed; records where it happened."""

    def __init__(self, module: str, operation: str, message: str):
        super().__init__(f"{module}.{operation}: {message}")
        self.module = module
        self.operation = operation


class ConfigError(LabError):
    """An experiment configuration violates the schema."""
