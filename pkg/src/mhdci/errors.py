"""Exception types shared across the toolkit.

Every rejection carries the quantity that triggered it so callers (and the
CLI reports) can surface the number instead of just a message.
"""


class ToolkitError(Exception):
    """Base class for all toolkit errors."""


class UnsupportedDimension(ToolkitError):
    def __init__(self, n, minimum=4):
        self.n = n
        self.minimum = minimum
        super().__init__(f"dimension n={n} unsupported (need n >= {minimum})")


class NonUnitVector(ToolkitError):
    def __init__(self, name, norm):
        self.name = name
        self.norm = norm
        super().__init__(f"{name} must be a unit vector, got |{name}| = {norm:.17g}")


class StructureViolation(ToolkitError):
    """An embedded matrix breaks its block structure."""

    def __init__(self, block, magnitude):
        self.block = block
        self.magnitude = magnitude
        super().__init__(f"block '{block}' violates its structure by {magnitude:.3e}")


class DegenerateInput(ToolkitError):
    pass


class DegenerateDirection(ToolkitError):
    def __init__(self, msg="direction parallel to the time axis"):
        super().__init__(msg)


class AlignmentError(ToolkitError):
    def __init__(self, residual):
        self.residual = residual
        super().__init__(f"amplitude not aligned: |W e_1| = {residual:.3e} relative")


class OutsideHull(ToolkitError):
    """Point not representable as a convex combination of library atoms."""

    def __init__(self, violation, dual=None):
        self.violation = violation
        self.dual = dual
        super().__init__(f"point outside sampled hull (separation {violation:.3e})")


class NumericalDegeneracy(ToolkitError):
    pass


class AtConstraintSet(ToolkitError):
    """The state is (numerically) already an extreme point of the constraint set."""

    def __init__(self, msg="state already at the constraint set; no usable direction"):
        super().__init__(msg)


class GeometryError(ToolkitError):
    def __init__(self, msg, endpoint=None):
        self.endpoint = endpoint
        super().__init__(msg)


class CoveringError(ToolkitError):
    def __init__(self, achieved, target, pieces):
        self.achieved = achieved
        self.target = target
        self.pieces = pieces
        super().__init__(
            f"covering reached volume fraction {achieved:.4f} < {target:.4f} "
            f"with {pieces} pieces"
        )


class PlacementError(ToolkitError):
    pass


class UnresolvedKernel(ToolkitError):
    def __init__(self, r, h):
        self.r = r
        self.h = h
        super().__init__(f"mollifier radius {r:.4g} under-resolved on grid step {h:.4g} (need r >= 2h)")


class ConfigError(ToolkitError):
    pass


class SchemeError(ToolkitError):
    def __init__(self, msg, iteration=None, distances=None):
        self.iteration = iteration
        self.distances = distances
        super().__init__(msg)
