"""Exception types shared across the package.

The pipeline maps these onto process exit codes, so raising the right
class matters: ConfigError -> 2, DataError -> 3, NumericalError -> 4.
"""


class ConfigError(ValueError):
    """Run configuration is malformed or inconsistent."""


class DataError(ValueError):
    """Input data violates a documented schema or invariant."""


class NumericalError(RuntimeError):
    """An estimation or test is numerically infeasible on the given data."""
