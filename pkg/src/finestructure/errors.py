"""Exception hierarchy.

Three families map onto the command-line exit codes: configuration and
precondition problems (2), bad input data (3) and analyses that cannot
produce a result (4).
"""


class FineStructureError(Exception):
    """Base class for all package errors."""

    kind = "error"


class ConfigError(FineStructureError, ValueError):
    """Invalid configuration value or violated precondition."""

    kind = "config_error"


class DataError(FineStructureError, ValueError):
    """Malformed, empty or non-uniform input data."""

    kind = "data_error"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class AnalysisError(FineStructureError, RuntimeError):
    """An analysis step could not produce a result (too few states, etc.)."""

    kind = "analysis_error"
