"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class SlidError(Exception):
    exit_code = 1


class ConfigError(SlidError, ValueError):
    """Invalid configuration value or unknown configuration key."""

    exit_code = 1


class UsageError(SlidError, RuntimeError):
    """API used out of order (e.g. backward before forward)."""

    exit_code = 1


class ResourceError(SlidError, RuntimeError):
    """Requested computation is too large for the chosen mode."""

    exit_code = 1


class DataError(SlidError, ValueError):
    """Input data violates a contract (bad file, unknown language, ...)."""

    exit_code = 2


class NumericError(SlidError, ArithmeticError):
    """Non-finite values or degenerate statistics."""

    exit_code = 3
