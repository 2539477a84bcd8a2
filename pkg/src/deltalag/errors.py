"""Exception hierarchy shared across the package."""


class DeltaLagError(Exception):
    """Base class for all package errors."""


class DataError(DeltaLagError):
    """Input market data violates an invariant."""


class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class WindowUnavailable(DataError):
    """A rolling window touches an invalid day."""


class ConfigError(DeltaLagError, ValueError):
    pass


class DimensionError(DeltaLagError, ValueError):
    pass


class DomainError(DeltaLagError, ValueError):
    pass


class ContractError(DeltaLagError):
    pass


class FormatError(DeltaLagError):
    """Checkpoint file is corrupt or does not match the expected manifest."""


class SkipDate(DeltaLagError):
    """A cross-section cannot be used (degenerate variance, too few stocks...)."""


class TrainingError(DeltaLagError):
    pass
