"""Exception types shared across the package.

The CLI maps these to exit codes: ConfigError -> 2, DataError -> 3,
CheckpointError -> 4.
"""


class ConfigError(ValueError):
    """Invalid configuration value or file."""


class DataError(ValueError):
    """Invalid dataset manifest, missing files or malformed inputs."""


class CheckpointError(ValueError):
    """Checkpoint cannot be loaded or does not match the model."""


class ContractError(ValueError):
    """A shape or state contract between operations was violated."""


class FitError(ValueError):
    """Geometric fit failed (degenerate or insufficient points)."""
