"""Exception types shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, IntegrityError -> 4.
"""


class ConfigError(ValueError):
    """Invalid run configuration, schema declaration, or unreachable privacy target."""


class DataError(ValueError):
    """Input data cannot be used: bad CSV, degenerate column, empty table."""


class IntegrityError(RuntimeError):
    """Checkpoint file is corrupt, truncated, or has the wrong magic/version."""


class NonPrivateRunError(RuntimeError):
    """A privacy-ledger update was requested for a run with sigma = 0."""
