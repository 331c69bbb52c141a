"""Exception hierarchy shared across the package."""


class PssmpError(Exception):
    """Base class for all package errors."""


class ModelError(PssmpError, ValueError):
    """Invalid Levy model parameters."""


class RepeatedRootError(PssmpError, ArithmeticError):
    """Partial-fraction inversion met a root of unsupported multiplicity."""


class GridMismatchError(PssmpError, ValueError):
    """Two grids with different geometry were combined."""


class NonConvergence(PssmpError, ArithmeticError):
    """A series or fixed-point iteration could not be certified."""


class UnsupportedIndexError(PssmpError, ValueError):
    """The requested function is not defined for this self-similarity index."""


class BarrierOrderError(PssmpError, ValueError):
    """Barriers violate 0 < c <= y <= d (or c < d)."""


class QuadratureFailure(PssmpError, ArithmeticError):
    """Adaptive quadrature did not reach the requested tolerance."""


class TailNotCertified(PssmpError, ArithmeticError):
    """An improper integral could not be truncated with a certified tail."""


class UnsupportedModelError(PssmpError, ValueError):
    """The model falls outside the domain of a formula."""
