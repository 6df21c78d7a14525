"""Exception hierarchy.

Each class carries the CLI exit code it maps to.
"""


class TsRefineError(Exception):
    exit_code = 1


class UsageError(TsRefineError, ValueError):
    """Caller passed arguments that cannot work together."""

    exit_code = 2


class ConfigurationError(UsageError):
    """Invalid grid, scenario or threshold settings."""


class DataError(TsRefineError, ValueError):
    """Input data violates a physical or structural invariant."""

    exit_code = 3


class SchemaError(DataError):
    pass


class ModelLoadError(DataError):
    pass


class FitError(TsRefineError, ArithmeticError):
    """A regression group cannot be estimated."""

    exit_code = 4
