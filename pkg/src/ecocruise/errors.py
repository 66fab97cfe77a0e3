"""Exception taxonomy shared by all modules.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, NumericalError -> 4.
"""


class EcoCruiseError(Exception):
    """Base class for all package errors."""


class ConfigError(EcoCruiseError):
    """Invalid or inconsistent configuration (bad JSON, unknown keys, bad values)."""


class DataError(EcoCruiseError):
    """Malformed or insufficient input data."""


class CoverageError(DataError):
    """A requested span is not covered by the available data."""

    def __init__(self, message: str, missing_lo: float | None = None,
                 missing_hi: float | None = None):
        super().__init__(message)
        self.missing_lo = missing_lo
        self.missing_hi = missing_hi


class ContiguityError(DataError):
    """Records are not contiguous on the distance grid."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class ColdStartError(DataError):
    """Not enough trip history to form a primitive set yet."""


class NumericalError(EcoCruiseError):
    """Non-finite values or diverging computations."""
