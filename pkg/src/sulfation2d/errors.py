"""Exception types raised by the solver components."""


class SulfationError(Exception):
    """Base class for all package errors."""


class GeometryError(SulfationError):
    pass


class AllInsideError(GeometryError):
    """The level set is negative on (essentially) the whole box: no ghost layer."""


class AllOutsideError(GeometryError):
    """The level set is nonnegative everywhere: the domain is empty."""


class DegenerateGradientError(GeometryError):
    """The level-set gradient vanishes where a normal is required."""


class NoBracketError(GeometryError):
    """The probe segment for a ghost point does not bracket the boundary."""


class StencilEscapeError(GeometryError):
    """A ghost stencil leaves the active node set (grid too coarse)."""


class EmptyImageError(GeometryError):
    """A raster supposed to define a domain is single-valued."""


class SingularPivotError(SulfationError):
    """A 2x2 relaxation pivot (or a c-row diagonal) is numerically singular."""

    def __init__(self, row, detail=""):
        self.row = row
        super().__init__(f"singular pivot at row {row}" + (f": {detail}" if detail else ""))


class LinearSolveFailureError(SulfationError):
    """The inner multigrid solver failed to reduce the defect."""


class MaxNewtonIterationsError(SulfationError):
    """Newton did not meet its tolerance within the iteration cap."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class HierarchyTooShallowError(SulfationError):
    """The finest grid is too small to build a two-level hierarchy."""
