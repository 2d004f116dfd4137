"""Exception types raised across the package."""


class PhotorealError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(PhotorealError, ValueError):
    """Tensor extents do not fit an operation."""


class NonFiniteError(PhotorealError, ArithmeticError):
    """A NaN or Inf appeared in a forward value, gradient or loss term."""


class ImageFormatError(PhotorealError, ValueError):
    """An image file could not be parsed."""


class CheckpointError(PhotorealError, ValueError):
    """A checkpoint file is malformed or incompatible."""


class ConfigError(PhotorealError, ValueError):
    """A configuration value is out of range."""
