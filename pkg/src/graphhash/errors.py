"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError (and subclasses) -> 3, DivergenceError -> 4.
"""


class GraphHashError(Exception):
    """Base class for all library errors."""


class ConfigError(GraphHashError):
    """Invalid configuration value or inconsistent configuration."""


class DataError(GraphHashError):
    """Invalid input data (validation failures, bounds violations)."""


class ParseError(DataError):
    """Malformed input file."""

    def __init__(self, message, path=None, line_no=None):
        loc = ""
        if path is not None:
            loc += f"{path}:"
        if line_no is not None:
            loc += f"{line_no}:"
        super().__init__(f"{loc} {message}" if loc else message)
        self.path = path
        self.line_no = line_no


class DivergenceError(GraphHashError):
    """A numeric quantity became non-finite."""
