"""Exception hierarchy shared by all modules."""


class ConstraintMapError(Exception):
    """Base class for every error raised by this package."""


class NonUniqueProjection(ConstraintMapError, ValueError):
    """The point lies on or beyond the medial axis of the obstacle boundary."""


class NotOnBoundary(ConstraintMapError, ValueError):
    pass


class DeepPenetration(ConstraintMapError, ValueError):
    """A field value sits too deep inside the obstacle to be projected."""


class InfeasibleBoundaryData(ConstraintMapError, ValueError):
    pass


class InfeasibleField(ConstraintMapError, ValueError):
    pass


class InfeasibleEndpoint(ConstraintMapError, ValueError):
    pass


class StepCollapse(ConstraintMapError, RuntimeError):
    """Backtracking shrank the step below the floating point floor."""


class BallOutsideDomain(ConstraintMapError, ValueError):
    pass


class InvalidDimension(ConstraintMapError, ValueError):
    pass


class DivergentIntegrand(ConstraintMapError, ValueError):
    pass


class NonConvexObstacle(ConstraintMapError, ValueError):
    pass


class ConstantOnSphere(ConstraintMapError, ValueError):
    pass


class EmptyScan(ConstraintMapError, ValueError):
    pass


class ZeroEnergy(ConstraintMapError, ValueError):
    pass


class ConfigError(ConstraintMapError, ValueError):
    """Scenario configuration violates the schema.

    Parameters
    ----------
    path : str
        Dotted path of the offending key, e.g. ``"obstacle.kind"``.
    message : str
        Human readable description.
    """

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class SchemaMismatch(ConstraintMapError, ValueError):
    pass
