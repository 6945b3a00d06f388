"""Exception types shared across the toolkit."""


class MetocalError(Exception):
    """Base class for toolkit errors."""


class ConfigError(MetocalError):
    """Invalid run configuration (CLI exit code 2)."""


class DataError(MetocalError):
    """Malformed or inconsistent input data (CLI exit code 3)."""


class FitError(MetocalError):
    """Numerical failure during fitting or prediction (CLI exit code 4)."""
