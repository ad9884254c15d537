"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A scenario configuration failed validation; message names the field."""


class NumericsError(RuntimeError):
    """A solver failed numerically (singular solve, lost mass, bad grid)."""


class TailInconclusiveError(RuntimeError):
    """A tail-classification window met neither the power-law nor slim-tail criterion."""


class InvariantViolationError(RuntimeError):
    """A conserved-quantity check failed during integration."""

    def __init__(self, message: str, t: float | None = None, last_state=None):
        super().__init__(message)
        self.t = t
        self.last_state = last_state
