"""Exception types shared across the package."""


class DomainError(ValueError):
    """A parameter or argument violates a documented precondition."""


class NumericalError(RuntimeError):
    """A numerical routine produced NaN, negative density, or failed to converge."""


class RegimeWarning(UserWarning):
    """Emitted when a closed form is evaluated outside its intended regime."""
