"""Exception types shared across the package.

Every refusal raised by the certified-bound pipeline carries enough
structure (stage name, condition name) for a caller to render a report
without string-parsing the message.
"""


class PolygasError(Exception):
    """Base class for all package errors."""


class DomainError(PolygasError):
    """An input is outside the mathematical domain of an operation."""


class InfeasibleError(PolygasError):
    """A certified-bound stage refused because a named condition failed.

    Attributes
    ----------
    stage : str
        Pipeline stage that refused (e.g. "input_norms", "reblock").
    condition : str
        Code name of the binding condition (e.g. "small_field").
    detail : dict
        Numbers backing the refusal: ratios, margins, thresholds.
    """

    def __init__(self, stage, condition, message, detail=None):
        super().__init__(message)
        self.stage = stage
        self.condition = condition
        self.detail = dict(detail or {})


class DivergenceError(PolygasError):
    """A series evaluator found no evidence of convergence."""


class VerificationError(PolygasError):
    """A dual-route consistency check failed beyond tolerance."""
