"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Caller handed data that violates an operation's preconditions."""


class ConfigurationError(ValueError):
    """Weights, shapes, or config options that do not fit together."""


class DegenerateFitError(RuntimeError):
    """Rigid fit attempted on a degenerate (rank-deficient) configuration."""


class FitFailureError(RuntimeError):
    """Robust fitting produced no usable hypothesis."""


class UsageError(RuntimeError):
    """API called out of order (e.g. backward before forward)."""


class WeightsFormatError(ValueError):
    """Weights file is malformed, truncated, or inconsistent."""
