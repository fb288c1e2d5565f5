"""Exception hierarchy shared by every splitobs module."""


class SplitObsError(Exception):
    """Base class for all library errors."""


class DimensionMismatch(SplitObsError, ValueError):
    pass


class NotObservable(SplitObsError):
    pass


class SolverDiverged(SplitObsError):
    pass


class EigenNonConvergence(SplitObsError):
    pass


class IntertwiningViolated(SplitObsError):
    pass


class MissingSelfLoop(SplitObsError, ValueError):
    pass


class NotIrreducible(SplitObsError):
    pass


class NotSymmetricGraph(SplitObsError, ValueError):
    pass


class NotDoublyStochastic(SplitObsError):
    pass


class CouplingDegenerate(SplitObsError):
    pass


class EmptyFamily(SplitObsError, ValueError):
    pass


class OutOfHorizon(SplitObsError, ValueError):
    pass


class ToleranceNotMet(SplitObsError):
    pass


class InsufficientData(SplitObsError):
    pass


class FaultBreaksAssumptions(SplitObsError):
    """A fault would leave survivors disconnected or not jointly observable.

    ``assumption`` names what failed: ``"strong connectivity"`` or
    ``"joint observability"``.
    """

    def __init__(self, assumption, detail=""):
        self.assumption = assumption
        msg = f"fault breaks {assumption}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class SchemaError(SplitObsError):
    """Scenario file failed validation; ``errors`` holds one message per problem."""

    def __init__(self, errors, path=None):
        self.errors = list(errors)
        self.path = path
        head = f"{path}: " if path else ""
        super().__init__(head + "; ".join(self.errors))
