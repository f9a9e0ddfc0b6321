"""Exception hierarchy shared by all modules."""


class QuasiStatesError(Exception):
    """Base class for every error raised by this package."""


class ParseError(QuasiStatesError, ValueError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class DataError(QuasiStatesError, ValueError):
    """Input values violate a domain constraint (e.g. non-positive price)."""


class InsufficientDataError(DataError):
    pass


class DegenerateVarianceError(DataError):
    """A standard deviation needed as a divisor is zero."""

    def __init__(self, message, ticker=None, time=None):
        self.ticker = ticker
        self.time = time
        super().__init__(message)


class ConfigurationError(QuasiStatesError, ValueError):
    pass


class CannotSplitError(QuasiStatesError):
    """A cluster cannot be bisected because all its points coincide."""


class EstimationError(QuasiStatesError):
    """Drift/potential estimation produced no usable result."""


class PipelineOrderError(QuasiStatesError):
    """A stage ran before the stage producing its inputs."""


class AllWindowsFailedError(EstimationError):
    """Every window of a potential sweep failed to estimate."""
