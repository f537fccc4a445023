"""Exception types shared across the package."""


class HaloError(ValueError):
    """Base class for all errors raised by this package."""


class ShapeError(HaloError):
    """Operands have incompatible shapes."""


class DivisibilityError(HaloError):
    """A spatial dimension is not divisible by the block size."""


class ConfigError(HaloError):
    """An invalid configuration value."""


class DomainError(HaloError):
    """An input value outside the mathematical domain of the operation."""
