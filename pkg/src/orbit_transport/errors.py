"""Exception hierarchy. Checkers report negative answers as results, not errors."""


class OrbitTransportError(Exception):
    pass


class ValidationError(OrbitTransportError):
    """Input violates a structural invariant; the message names the location."""


class ParseError(OrbitTransportError):
    pass


# core_spaces
class GeneratorNotIsometry(ValidationError):
    pass


class GeneratorNotMeasurePreserving(ValidationError):
    pass


class ClosureExceedsCap(OrbitTransportError):
    pass


class QuotientNotMetric(OrbitTransportError):
    pass


class NotSurjective(ValidationError):
    pass


class ConditionalNotSupported(ValidationError):
    pass


# transport
class DimensionMismatch(ValidationError):
    pass


class SolverFailure(OrbitTransportError):
    pass


class NotCpConcave(OrbitTransportError):
    pass


class BudgetExceeded(OrbitTransportError):
    pass


# equivariant
class SectionOutsideOD(OrbitTransportError):
    pass


class InfeasibleInput(ValidationError):
    pass


class CouplingNotOptimal(OrbitTransportError):
    pass


# ollivier
class SamePoint(ValidationError):
    pass


class NoODRepresentative(OrbitTransportError):
    pass


# graph_calculus
class NonpositiveFunction(ValidationError):
    pass


class ActionNotWeightPreserving(ValidationError):
    pass


class ActionNotMeasurePreserving(ValidationError):
    pass


# discrete_flow
class NegativeInput(ValidationError):
    pass


class GroupNotKernelPreserving(ValidationError):
    pass


class NotConverged(OrbitTransportError):
    """Solver stopped before meeting its criteria; `result` holds the best path found."""

    def __init__(self, message: str, result=None):
        super().__init__(message)
        self.result = result
