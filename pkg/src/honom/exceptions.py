"""Error types raised by the solver stack."""


class NomError(Exception):
    """Base class for solver errors."""


class SingularSupport(NomError):
    """A moment matrix is numerically singular (too few or degenerate neighbors)."""

    def __init__(self, message, points=None):
        super().__init__(message)
        self.points = list(points or [])


class InvertedElement(NomError):
    """Deformation gradient with ``det F <= 0``."""

    def __init__(self, message, points=None, step=None, iteration=None):
        super().__init__(message)
        self.points = list(points or [])
        self.step = step
        self.iteration = iteration


class SolveFailed(NomError):
    """Linear solve broke down."""


class NoConvergence(NomError):
    """An iterative method hit its iteration cap."""

    def __init__(self, message, step=None, iteration=None):
        super().__init__(message)
        self.step = step
        self.iteration = iteration


class ZeroReference(NomError):
    """Relative error requested against an identically zero reference field."""


class ConfigError(NomError):
    """Invalid or under-resolved run configuration."""
