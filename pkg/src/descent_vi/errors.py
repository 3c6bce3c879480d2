"""Exception types shared across the package."""


class DescentVIError(Exception):
    """Base class for all errors raised by descent_vi."""


class ConfigurationError(DescentVIError, ValueError):
    """Invalid user-supplied configuration (grid sizes, model names, keys)."""


class ContractError(DescentVIError, ValueError):
    """A field or argument does not conform to the object it is used with."""


class NumericalError(DescentVIError, ArithmeticError):
    """A computation produced a nonfinite value or failed a consistency check."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index
