"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """An argument violates a documented precondition (shape, range, grammar)."""


class NumericDomainError(ArithmeticError):
    """A value is non-finite where a finite one is required."""


class InvalidState(RuntimeError):
    """An operation was requested before the state it depends on exists."""
