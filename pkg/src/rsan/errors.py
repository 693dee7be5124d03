"""Exception hierarchy shared across the package."""


class RSANError(Exception):
    """Base class for all package errors."""


class DimensionError(RSANError, ValueError):
    pass


class DomainError(RSANError, ValueError):
    pass


class DegenerateVectorError(RSANError, ValueError):
    pass


class UsageError(RSANError, RuntimeError):
    pass


class ContractViolation(RSANError, ValueError):
    pass


class ConfigurationError(RSANError, ValueError):
    pass


class DataError(RSANError, ValueError):
    pass


class NonFiniteError(RSANError, FloatingPointError):
    """Raised when a NaN or Inf shows up in an op output or a loss term."""

    def __init__(self, message, term=None):
        super().__init__(message)
        self.term = term


class FormatError(RSANError, ValueError):
    """Malformed binary file. Carries the byte offset of the failure."""

    def __init__(self, message, offset=0, expected=None):
        super().__init__(f"{message} (offset={offset}" + (f", expected={expected!r})" if expected else ")"))
        self.offset = offset
        self.expected = expected
