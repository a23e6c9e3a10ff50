"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Raised when components are wired together inconsistently."""


class KinkError(RuntimeError):
    """Signals that a gradient-check point is too close to a ReLU kink.

    Callers should resample the evaluation point.
    """
