"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Array shapes or dimensions do not agree."""


class ConfigError(ValueError):
    """An experiment or component configuration is invalid."""


class NumericalError(ArithmeticError):
    """A computation produced (or would produce) non-finite values."""
