"""Exception taxonomy shared by every module.

The CLI maps these onto exit codes, so each failure class gets its own type.
"""


class ConvexqError(Exception):
    """Base class for all library errors."""


class InputError(ConvexqError, ValueError):
    """Malformed or out-of-range input (dimension mismatch, bad index, ...)."""


class InfeasibleEncodingError(ConvexqError):
    """A block would exceed operator norm 1 (sparse access or amplification)."""


class ApproximationError(ConvexqError):
    """No polynomial below the degree cap reaches the requested accuracy."""


class DegenerateBetaError(ConvexqError):
    """Some inner product x_i . c is below the floor, so it cannot be divided out."""


class SingularOperatorError(ConvexqError):
    """Every eigenvalue sits below the inversion cutoff."""


class PreconditionError(ConvexqError):
    """A structural precondition (such as a Hessian norm bound) does not hold."""


class DimensionCapError(ConvexqError):
    """The requested problem exceeds the configured dense-dimension cap."""


class ConvergenceError(ConvexqError):
    """An iterative estimator hit its iteration cap without converging."""
