"""Exception hierarchy shared by every csgpack module."""


class CsgError(Exception):
    """Base class for all csgpack errors."""


class GeometryError(CsgError, ValueError):
    pass


class NonConvex(GeometryError):
    pass


class Degenerate(GeometryError):
    pass


class SingularLattice(GeometryError):
    pass


class OutOfBounds(GeometryError):
    pass


class NumericalError(CsgError, ArithmeticError):
    """Failures of the sampler or the natural-gradient solver."""


class NonPositiveKappa(NumericalError):
    pass


class ZeroConcentration(NumericalError):
    pass


class KappaUnderflow(NumericalError):
    pass


class DivergentRejection(NumericalError):
    pass


class SingularFisher(NumericalError):
    pass


class ConfigError(CsgError, ValueError):
    """Invalid or unreadable run configuration."""
