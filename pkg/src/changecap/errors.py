"""Exception types shared across the package."""


class ChangecapError(Exception):
    """Base class for all package errors."""


class DimensionError(ChangecapError, ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class ConfigError(ChangecapError, ValueError):
    """A configuration value is invalid or unsupported."""


class NumericError(ChangecapError, ArithmeticError):
    """An operation received or produced non-finite values it cannot handle."""


class ContractError(ChangecapError, RuntimeError):
    """An API was called outside its documented contract."""


class StaleTapeError(ContractError):
    """backward() was called on a graph whose tape has already been consumed."""


class LoadError(ChangecapError, ValueError):
    """A file (checkpoint, manifest, image) failed validation while loading."""
