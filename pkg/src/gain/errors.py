"""Error taxonomy shared by all gain modules.

Exit-code mapping used by the CLI: UsageError/ConfigError -> 1,
DataError -> 2, NumericError -> 3.
"""


class GainError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(GainError):
    """Bad command line invocation."""


class ConfigError(GainError):
    """Invalid or inconsistent configuration values."""


class DataError(GainError):
    """Malformed input data (corpus files, gazetteers, checkpoints)."""


class ContractError(GainError):
    """A caller violated an API precondition (shape/length mismatch etc.)."""


class NumericError(GainError):
    """Non-finite values or numeric breakdown during computation."""
