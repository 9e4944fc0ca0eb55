"""Exception types shared across the package."""


class ParameterError(ValueError):
    """Invalid or mutually inconsistent parameters."""


class GeometryError(RuntimeError):
    """No legal pixel displacement exists for the given input."""


class DegenerateError(RuntimeError):
    """A ratio has a vanishing denominator (constant representation)."""


class TrainingDivergence(RuntimeError):
    """The training loss became non-finite."""
