"""Exception hierarchy shared by all pmcf modules.

The CLI maps these onto process exit codes: configuration/input problems
exit with 2, numerical failures with 3, and search failures with 4.
"""


class PmcfError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PmcfError):
    """Bad configuration text or invalid user-supplied values (exit code 2)."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InputError(ConfigError):
    """An operation was called with values outside its contract."""


class FieldFormatError(ConfigError):
    """A field file failed magic/shape/length validation."""


class GridMismatchError(PmcfError, ValueError):
    """Fields attached to different grids were combined."""


class NumericError(PmcfError):
    """A solver failed to converge or produced non-finite values (exit code 3).

    ``payload`` carries partial results (best iterate, trace, ...) so a
    caller can inspect how far the computation got.
    """

    def __init__(self, message, payload=None):
        super().__init__(message)
        self.payload = payload


class ConstructionError(NumericError):
    """A constructed field failed one of its verified certificates."""


class SearchError(PmcfError):
    """A saddle/path search ended without a usable result (exit code 4)."""

    def __init__(self, message, payload=None):
        super().__init__(message)
        self.payload = payload
