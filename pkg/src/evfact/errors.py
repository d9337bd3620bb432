"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
ShapeError / ContractError / NumericError -> 3.
"""


class EvfactError(Exception):
    """Base class for all package errors."""


class ConfigError(EvfactError):
    """Invalid configuration or invalid combination of options."""


class DataError(EvfactError):
    """Malformed or inconsistent input data (treebanks, records, tables)."""


class ShapeError(EvfactError):
    """Tensor shapes do not conform to an operation's contract."""


class ContractError(EvfactError):
    """An internal API precondition was violated by the caller."""


class NumericError(EvfactError):
    """Non-finite values or numerically invalid inputs."""
