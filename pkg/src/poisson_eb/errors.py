"""Exception types raised across the package."""


class PoissonEBError(Exception):
    """Base class for all package errors."""


class InvalidPrior(PoissonEBError, ValueError):
    pass


class ZeroMassBelowCutoff(PoissonEBError, ValueError):
    pass


class UnsupportedPoint(PoissonEBError, ArithmeticError):
    """The mixture pmf underflows to zero at the requested count."""


class EmptySample(PoissonEBError, ValueError):
    pass


class InvalidBounds(PoissonEBError, ValueError):
    pass


class SupportMismatch(PoissonEBError, ValueError):
    """Absolute continuity fails for a KL or chi-squared divergence."""


class NoProgress(PoissonEBError, RuntimeError):
    pass


class NonFiniteFunction(PoissonEBError, ValueError):
    pass


class InsufficientPoints(PoissonEBError, ValueError):
    pass
