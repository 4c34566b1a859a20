"""Exception hierarchy shared by all solver modules."""


class MinkowskiError(Exception):
    """Base class for every error raised by minkflow."""


class DomainError(MinkowskiError, ValueError):
    """Argument outside the domain of a function (e.g. a non-positive radius)."""


class NotPositive(MinkowskiError, ValueError):
    """Support function is not strictly positive: origin is not interior."""


class NotConvex(MinkowskiError, ValueError):
    """Principal radius h'' + h dropped below the convexity threshold."""

    def __init__(self, theta: float, value: float, threshold: float):
        self.theta = theta
        self.value = value
        self.threshold = threshold
        super().__init__(
            f"principal radius {value:.6g} <= {threshold:.3g} at theta={theta:.6g}"
        )


class InvalidPolygon(MinkowskiError, ValueError):
    """Vertex list is not a CCW strictly convex polygon around the origin."""


class DegenerateEdge(InvalidPolygon):
    """Two consecutive polygon vertices coincide."""


class EmptyInterior(MinkowskiError):
    """A half-plane intersection has no interior."""


class StepTooLarge(MinkowskiError, ValueError):
    """Perturbation step is zero or destroys positivity of h_t."""


class FacetMismatch(MinkowskiError):
    """Polygon carries a massive facet whose normal is not an atom direction."""


class NotSpread(MinkowskiError, ValueError):
    """Measure is concentrated in a closed half-circle."""


class MaxIters(MinkowskiError):
    """Iteration budget exhausted; the best iterate is attached."""

    def __init__(self, message: str, best=None, report=None):
        super().__init__(message)
        self.best = best
        self.report = report
