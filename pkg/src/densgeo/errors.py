"""Exception types raised across the package."""


class DensGeoError(Exception):
    """Base class for all package errors."""


class GridParseError(DensGeoError, ValueError):
    """A PGM or CSV grid file is malformed."""


class GridRangeError(DensGeoError, ValueError):
    """A density value falls outside [0, 1]."""


class DegenerateGeometryError(DensGeoError, ValueError):
    """A component has (near) zero length."""


class EmptyBBoxError(DensGeoError):
    """No pixel of a component reaches the coverage level."""


class FitError(DensGeoError):
    """The fitting engine could not produce a valid component set."""


class GenerationError(DensGeoError):
    """Random sample generation exhausted its attempt budget."""


class SolverError(DensGeoError):
    """The finite-element system is singular or the solve is inaccurate."""


class BCConnectionError(DensGeoError):
    """Boundary-condition connection could not be attempted."""
