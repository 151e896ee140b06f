"""Exception types raised by the demixing toolkit."""


class DemixError(Exception):
    """Base class for all errors raised by :mod:`demix`."""


class InvalidArgument(DemixError, ValueError):
    """An argument violates a documented precondition (shape, divisibility, range)."""


class PreconditionViolation(InvalidArgument):
    """An input object fails a numerical precondition, e.g. a basis that is not orthonormal."""


class DivergedError(DemixError, ArithmeticError):
    """Raised when a solver produces non-finite or exploding iterates.

    Attributes
    ----------
    iteration : int
        Index of the iteration at which divergence was detected.
    """

    def __init__(self, iteration, message=None):
        self.iteration = int(iteration)
        super().__init__(message or "solver diverged at iteration %d" % self.iteration)


class ConfigError(DemixError):
    """A configuration file or override is malformed. ``key`` names the offender."""

    def __init__(self, key, message):
        self.key = key
        super().__init__("config key %r: %s" % (key, message))
