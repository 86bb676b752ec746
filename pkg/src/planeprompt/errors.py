"""Error taxonomy shared across the package.

Exit-code mapping (used by the CLI): ConfigError -> 2, DataError -> 3,
NumericFault -> 4.
"""


class PlanePromptError(Exception):
    """Base class for all package errors."""


class ConfigError(PlanePromptError):
    """Invalid configuration value or inconsistent config combination."""

    exit_code = 2


class DataError(PlanePromptError):
    """Bad input data: missing files, shape mismatches, empty label sets,
    degenerate prompts."""

    exit_code = 3


class NumericFault(PlanePromptError):
    """Non-finite value surfaced during a forward pass or training step."""

    exit_code = 4


class CheckpointError(DataError):
    """Unreadable, truncated, or version-incompatible checkpoint."""
