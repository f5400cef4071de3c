"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes do not line up."""


class DomainError(ValueError):
    """An argument lies outside the operation's domain."""


class CacheStateError(RuntimeError):
    """A block cache was read or written in an invalid state."""


class ConfigError(ValueError):
    """A configuration value is missing, malformed or infeasible."""
