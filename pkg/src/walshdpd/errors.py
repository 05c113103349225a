"""Exception hierarchy shared by every module.

Each error carries the CLI exit code it maps to, so the command-line driver
can translate failures without a lookup table.
"""


class WalshDpdError(Exception):
    exit_code = 1


class ConfigError(WalshDpdError):
    exit_code = 2


class InvalidSpecError(ConfigError):
    pass


class InvalidOrderError(ConfigError):
    pass


class InvalidBandError(ConfigError):
    pass


class InfeasibleBudgetError(ConfigError):
    pass


class DataError(WalshDpdError):
    exit_code = 3


class FormatError(DataError):
    pass


class LengthError(DataError):
    pass


class DimensionError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class NotFoundError(DataError):
    pass


class NumericError(WalshDpdError):
    exit_code = 4


class UndefinedPowerError(NumericError):
    """Raised when a power normalization or ratio has a zero-power reference."""


# Same condition, named after the reference-signal role it plays in NMSE/EVM.
UndefinedReferenceError = UndefinedPowerError


class NumericInputError(NumericError):
    pass
