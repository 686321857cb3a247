"""Exception types shared across the package.

The CLI maps these onto exit codes: validation problems exit with 2,
numerical failures (non-convergence, singular iterates) with 3, and
dataset/model format problems with 4.
"""


class ValidationError(ValueError):
    """Input violates a documented precondition or invariant."""


class FilterDesignError(ValidationError):
    """A requested IIR design is unstable or infeasible."""


class NumericalError(RuntimeError):
    """A numerical routine failed (singular matrix, overflow, ...)."""


class ConvergenceError(NumericalError):
    """An iterative solver ran out of iterations.

    Carries the last iterate and the residual at that iterate so callers
    can inspect or accept the partial result.
    """

    def __init__(self, message, last_iterate=None, residual=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual


class DataFormatError(Exception):
    """Base class for on-disk dataset/model format problems."""


class ManifestError(DataFormatError):
    """Manifest is missing, unreadable, or lacks required fields."""


class UnsupportedVersionError(DataFormatError):
    """Manifest declares a format version this library does not read."""


class ShapeMismatchError(DataFormatError):
    """Payload size contradicts the shape declared in the manifest."""


class MissingPayloadError(DataFormatError):
    """Manifest references a payload file that does not exist."""
