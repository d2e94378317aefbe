"""Exception types shared across the package."""


class RdpNetError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(RdpNetError):
    """Operands have incompatible shapes, ranks, or channel counts."""


class DomainError(RdpNetError):
    """An input lies outside an operation's mathematical domain (log of a
    non-positive value, division by zero, ...). Messages name the offending
    flat/multi index."""


class NonFiniteError(RdpNetError):
    """A primitive produced NaN/Inf, or the training loss went non-finite."""


class DataError(RdpNetError):
    """Dataset, manifest, or raster validation failure."""


class CheckpointError(RdpNetError):
    """Checkpoint magic/version/shape mismatch or truncated file."""


class ConfigError(RdpNetError):
    """Invalid configuration value or unknown configuration key."""


class UsageError(RdpNetError):
    """Command-line usage error (bad flags, missing arguments)."""
