"""Exception hierarchy shared by every flarecast app.

Management commands map these onto process exit codes:
``DataError`` subclasses exit with 2, ``PropertyViolation`` with 3, anything
else raised from argument/config validation with 1.
"""


class FlarecastError(Exception):
    """Base class for all flarecast errors."""


class DataError(FlarecastError):
    """Input data is malformed, inconsistent or missing."""


class ShapeError(DataError):
    """Tensor or parameter shapes do not line up."""


class NonFiniteError(FlarecastError):
    """A public operation produced NaN or Inf."""


class TapeError(FlarecastError):
    """Backward was asked for something the tape never recorded."""


class WeightsFormatError(DataError):
    """Raster or weights file is malformed or truncated."""


class CatalogError(DataError):
    """Flare catalog or manifest violates its schema."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UndefinedScoreError(FlarecastError):
    """A skill score is undefined for the given confusion matrix."""


class FetchError(FlarecastError):
    """Image service request failed after retries."""


class ConfigError(FlarecastError):
    """Run configuration is invalid."""


class PropertyViolation(FlarecastError):
    """A machine-checked numerical property does not hold."""
