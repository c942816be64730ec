"""Exception types shared across the toolkit."""


class MarmError(Exception):
    pass


class TemplateInvalid(MarmError):
    pass


class ParamsBelowMinimum(MarmError):
    pass


class SchemaViolation(MarmError):
    def __init__(self, path, message=""):
        self.path = path
        super().__init__(f"{path}: {message}" if message else path)


class UnknownFrame(MarmError, KeyError):
    def __init__(self, name):
        self.name = name
        super().__init__(name)

    def __str__(self):
        return f"unknown frame {self.name!r}"


class NoConvergence(MarmError):
    """IK gave up. ``residuals`` holds the per-iteration error norms, ``q`` the last iterate."""

    def __init__(self, message, residuals=(), q=None):
        super().__init__(message)
        self.residuals = list(residuals)
        self.q = q


class HeightExceedsReach(MarmError):
    pass


class NonUnitNormal(MarmError):
    pass


class Infeasible(MarmError):
    def __init__(self, message, diagnostics=None, knot=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
        self.knot = knot


class SolverFailure(MarmError):
    pass


class ProjectionFailed(MarmError):
    pass


class SamplingExhausted(MarmError):
    pass


class PlanningTimeout(MarmError):
    pass


class InvalidEndpoints(MarmError):
    pass


class GeometryInvalid(MarmError):
    pass


class NotConverged(MarmError):
    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = stats


class NoFeasibleDesign(MarmError):
    pass
