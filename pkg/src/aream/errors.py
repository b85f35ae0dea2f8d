class ArgumentError(ValueError):
    """Raised when an operation receives inconsistent or invalid arguments."""


class InvariantError(RuntimeError):
    """Raised when a checked numerical invariant does not hold."""
