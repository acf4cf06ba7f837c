"""Exception hierarchy shared across the package."""


class McChannelError(Exception):
    """Base class for all package-specific errors."""


class DomainError(McChannelError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigurationError(McChannelError, ValueError):
    """A configuration value or combination is invalid."""


class DegenerateGridError(McChannelError):
    """A sampling grid produced slot means too small to carry information."""


class IllPosedGridError(McChannelError):
    """The Fisher information matrix is singular on the requested grid."""


class NumericalInstabilityError(McChannelError):
    """A finite-difference stencil failed to converge under step halving."""


class FitFailureError(McChannelError):
    """The swarm never found a finite-loss parameter vector."""


class SimulationFaultError(McChannelError):
    """Internal simulator fault, e.g. non-finite particle positions."""
