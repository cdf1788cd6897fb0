"""Exception types shared across the package.

Each class maps to one failure category; the CLI turns the category into an
exit code.
"""


class SanError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class UsageError(SanError):
    exit_code = 1


class ConfigurationError(SanError):
    exit_code = 1


class ShapeError(SanError, ValueError):
    exit_code = 1


class DataError(SanError):
    exit_code = 2


class CheckpointError(SanError):
    exit_code = 2


class GenerationError(SanError):
    exit_code = 2


class DegenerateVectorError(SanError, ArithmeticError):
    exit_code = 3


class NumericError(SanError):
    exit_code = 3
