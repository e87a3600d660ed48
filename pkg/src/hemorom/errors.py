"""Exception hierarchy shared by the library and the command line."""


class HemoromError(Exception):
    """Base class for all errors raised by hemorom."""


class FieldShapeError(HemoromError, ValueError):
    """A field does not match the mesh it is used with."""


class ConfigError(HemoromError, ValueError):
    """Invalid or unknown configuration value."""


class NumericalError(HemoromError, ArithmeticError):
    """A solver failed, diverged or produced non-finite values."""


class ConvergenceError(NumericalError):
    """An iterative solve did not reach its tolerance.

    Parameters
    ----------
    message : str
        Human readable description.
    residual : float, optional
        Last residual norm reached by the solver.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class RankError(HemoromError, ValueError):
    """Requested more modes than the snapshot set can support."""

    def __init__(self, message, usable_rank):
        super().__init__(message)
        self.usable_rank = usable_rank


class BundleError(HemoromError, OSError):
    """A persisted artifact is missing, partial or corrupted."""
