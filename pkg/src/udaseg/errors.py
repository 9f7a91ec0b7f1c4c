"""Exception types shared across the package."""


class UdasegError(Exception):
    """Base class for all package errors."""


class ShapeError(UdasegError, ValueError):
    """Arrays have incompatible dimensions."""


class InvalidInputError(UdasegError, ValueError):
    """Input values violate a precondition (non-finite, empty, ...)."""


class ConfigError(UdasegError, ValueError):
    """A configuration value is out of range or unknown."""


class IngestionError(UdasegError, OSError):
    """A file could not be found, read or decoded."""


class NumericError(UdasegError, ArithmeticError):
    """A loss or gradient became non-finite."""


class ContractError(UdasegError, RuntimeError):
    """An API was used out of order, e.g. backward with a stale cache."""
