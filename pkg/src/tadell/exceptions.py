"""Exception types shared across the package."""


class DimensionMismatch(ValueError):
    """Array shapes disagree with each other or with the learner state."""


class NonConvergence(RuntimeError):
    """An iterative solver stopped before meeting its tolerance.

    The best iterate found is kept on the exception so callers running in
    strict mode can still inspect it.
    """

    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class ConvergenceWarning(UserWarning):
    """Non-strict counterpart of :class:`NonConvergence`."""


class NotPSD(ValueError):
    """A weight matrix could not be factored even after adding jitter."""


class ZeroColumn(ValueError):
    pass


class SingularSystem(ValueError):
    pass


class DivergedPolicy(RuntimeError):
    pass


class NonFinite(FloatingPointError):
    """A simulated state left the finite floating point range."""


class BadRange(ValueError):
    pass
