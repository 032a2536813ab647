"""Exception hierarchy; CLI exit codes map onto these classes."""


class PropweightError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PropweightError):
    """Invalid run configuration (CLI exit code 2)."""


class DataError(PropweightError):
    """Invalid or inconsistent input data (CLI exit code 3)."""


class NumericalError(PropweightError):
    """Numerical failure during fitting or estimation (CLI exit code 4)."""
