"""Exception types shared across the package."""


class TempohierError(Exception):
    """Base class for all package errors."""


class DimensionError(TempohierError, ValueError):
    """Raised when tensor shapes do not conform."""


class DomainError(TempohierError, ValueError):
    """Raised when an elementwise op is applied outside its numeric domain."""


class ContractError(TempohierError, ValueError):
    """Raised when a caller violates an operation's precondition."""


class DataError(TempohierError, ValueError):
    """Raised for malformed or inconsistent input data."""


class TrainingError(TempohierError, RuntimeError):
    """Raised when training hits a non-finite loss or gradient."""
