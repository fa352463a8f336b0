"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
TrainingDiverged -> 4.
"""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class DataError(ValueError):
    """Malformed or invariant-violating on-disk data."""


class DomainError(ValueError):
    """Operation called outside its mathematical domain."""


class TrainingDiverged(RuntimeError):
    """Non-finite loss encountered during optimisation."""
