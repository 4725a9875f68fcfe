"""Exception hierarchy shared across the package."""


class MadError(Exception):
    """Base class for all package errors."""


class ShapeError(MadError, ValueError):
    """Array dimensions do not agree."""


class NumericDomainError(MadError, ValueError):
    """Non-finite input or a value outside its admissible domain."""


class ConditioningError(MadError, ArithmeticError):
    """A matrix stayed non positive-definite after jitter escalation."""


class AlignmentPreconditionError(MadError, ValueError):
    """The two views of an anchor set are not in row correspondence."""


class NoSharedSubspaceError(MadError):
    """The trained model has no shared latent dimension to match in."""


class InferenceError(MadError):
    """Latent inference failed for every restart.

    ``best`` carries the best partial result as ``(mean, variance, bound)``.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ParseError(MadError, ValueError):
    """Malformed input file."""
