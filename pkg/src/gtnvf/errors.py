"""Exception hierarchy. Each class maps to one CLI exit code."""


class GtnvfError(Exception):
    exit_code = 1


class ConfigError(GtnvfError, ValueError):
    """Inconsistent or invalid configuration."""

    exit_code = 2


class DataError(GtnvfError, ValueError):
    """Invalid input data (bad prices, empty windows, unknown nodes...)."""

    exit_code = 3


class NumericalError(GtnvfError, ArithmeticError):
    """Non-finite values during training or evaluation."""

    exit_code = 4
