"""Exception types raised across the package."""


class TBRiskError(Exception):
    """Base class for all package errors."""

    def __str__(self):
        # KeyError subclasses would otherwise repr() the message
        return str(self.args[0]) if self.args else ""


class MissingColumn(TBRiskError, KeyError):
    pass


class DuplicateColumn(TBRiskError, ValueError):
    pass


class UnknownColumn(TBRiskError, KeyError):
    pass


class ParseError(TBRiskError, ValueError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class TargetUnmappable(TBRiskError, ValueError):
    pass


class EmptyPartition(TBRiskError, ValueError):
    pass


class MissingDates(TBRiskError, ValueError):
    pass


class DegenerateTarget(TBRiskError, ValueError):
    pass


class SchemaMismatch(TBRiskError, ValueError):
    pass


class TooFewMinority(TBRiskError, ValueError):
    pass


class SingleClass(TBRiskError, ValueError):
    pass


class NonFiniteFeature(TBRiskError, ValueError):
    pass


class WidthMismatch(TBRiskError, ValueError):
    pass


class AllZeroPerformance(TBRiskError, ValueError):
    pass


class AllCandidatesFailed(TBRiskError, RuntimeError):
    pass


class NoPositives(TBRiskError, ValueError):
    pass


class DegeneratePerturbation(TBRiskError, ValueError):
    pass


class UnknownCohort(TBRiskError, KeyError):
    pass


class InfeasiblePrevalence(TBRiskError, ValueError):
    pass


class ConfigError(TBRiskError, ValueError):
    pass
