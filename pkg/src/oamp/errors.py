"""Exception types shared across the package."""


class OampError(Exception):
    """Base class for all package errors."""


class ConfigError(OampError):
    """Malformed or inconsistent experiment configuration."""


class DivergenceError(OampError):
    """An iteration produced non-finite messages.

    Raised instead of clamping: divergence on ill-conditioned systems is a
    finding to surface, not mask.
    """

    def __init__(self, iteration, message=None):
        self.iteration = iteration
        super().__init__(message or f"non-finite message at iteration {iteration}")


class QuadratureError(OampError):
    """Numerical integration failed to converge to the requested tolerance."""

    def __init__(self, residual, message=None):
        self.residual = residual
        super().__init__(message or f"quadrature did not converge (residual {residual:.3e})")


class UnsupportedStrategyError(OampError):
    """The requested coefficient strategy cannot be applied to this prototype."""


class ExperimentFailure(OampError):
    """All Monte-Carlo trials of an experiment diverged."""
