"""Exception types shared across modules."""


class AsyncSAError(Exception):
    """Base class for package errors."""


class ConfigError(AsyncSAError, ValueError):
    """Invalid configuration or argument."""


class KernelValidityError(AsyncSAError):
    """A transition row is not a probability vector."""


class AssumptionViolation(AsyncSAError):
    """A checkable convergence assumption failed.

    ``assumption`` names the failed item, e.g. ``"A4(b)"``.
    """

    def __init__(self, assumption, message):
        self.assumption = assumption
        super().__init__(f"[{assumption}] {message}")


class BoundednessViolation(AssumptionViolation):
    """Iterate left its configured compact box."""

    def __init__(self, assumption, n, x):
        self.n = n
        self.x = x
        super().__init__(assumption, f"iterate left the compact box at n={n}: x={x!r}")


class InsufficientHorizon(AsyncSAError, ValueError):
    """A diagnostic window extends past the logged trajectory."""
