"""Exception types shared across the package."""


class ConvergenceError(RuntimeError):
    """An iterative procedure failed to reach its tolerance.

    Carries the best residual seen and the iteration count so callers can
    report partial progress instead of a bare failure.
    """

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class CapacityError(RuntimeError):
    """A symbolic or lifted object would exceed the supported size."""


class StructureError(ValueError):
    """A matrix does not have the structure an algorithm relies on."""
