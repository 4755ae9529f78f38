"""Exception types shared across the package.

Everything raised on purpose derives from SenseSiameseError so callers
(and the CLI) can catch one base class and turn it into a clean exit.
"""


class SenseSiameseError(Exception):
    """Base class for all errors raised deliberately by this package."""


class ConfigError(SenseSiameseError):
    """A configuration value is out of range or inconsistent."""


class ShapeError(SenseSiameseError):
    """An array has the wrong shape, rank, or incompatible dimensions."""


class InvalidInput(SenseSiameseError):
    """Input data violates a documented precondition."""


class NumericsError(SenseSiameseError):
    """A computation produced NaN/Inf or otherwise left the valid domain."""


class FormatError(SenseSiameseError):
    """A file on disk does not match the expected binary or text format."""
