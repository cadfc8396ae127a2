"""Exception and warning types shared across the package."""


class ShapeError(ValueError):
    """An array had the wrong dimension for the operation."""


class ConfigurationError(ValueError):
    """Invalid configuration or inputs that make an operation meaningless."""


class ModelFormatError(ValueError):
    """A persisted model file could not be parsed."""


class ProjectionWarning(RuntimeWarning):
    """Dykstra's alternating projections stopped before reaching tolerance.

    The offending residual is available as ``residual`` on the warning
    instance; the (best-effort) projection is still returned.
    """

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual
