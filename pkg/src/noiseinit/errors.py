"""Exception types shared across the package."""


class NoiseInitError(Exception):
    """Base class for all package errors."""


class ShapeError(NoiseInitError, ValueError):
    """Array shapes are incompatible with the requested operation."""


class ParameterError(NoiseInitError, ValueError):
    """A scalar argument is outside its valid range."""


class NumericError(NoiseInitError, ArithmeticError):
    """A numerical routine failed (non-convergence, zero pivot, ...)."""


class ResourceError(NoiseInitError, RuntimeError):
    """A configured size cap was exceeded."""


class UnsupportedConfigurationError(NoiseInitError, ValueError):
    """The network configuration does not support the requested operation."""


class FormatError(NoiseInitError, ValueError):
    """A file does not follow the expected on-disk format."""


class ConfigError(NoiseInitError, ValueError):
    """A run configuration is missing keys or contains invalid values."""
