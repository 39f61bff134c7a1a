"""Exception types shared across the package.

Invalid arguments raise the built-in ``ValueError``; the classes below cover
failures that arise after inputs have been validated.
"""


class NumericalError(RuntimeError):
    """A linear-algebra or solver step failed beyond recovery (e.g. a
    covariance stayed non-positive-definite after maximum jitter)."""


class TrainingError(RuntimeError):
    """Optimization failed (diverged or produced persistent non-finite
    objectives).  Carries the partial trace when one is available."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
