"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ConfigurationError(ValueError):
    """A configuration value violates a structural constraint."""


class TrackingError(RuntimeError):
    """The tracker was asked to operate on unusable input."""


class TrainingDivergence(RuntimeError):
    """The training loss became non-finite."""
