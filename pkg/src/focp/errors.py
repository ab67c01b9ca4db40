"""Exception types shared across the package."""


class FocpError(Exception):
    """Base class for all package-specific errors."""


class ParameterDomainError(FocpError, ValueError):
    """A numeric parameter lies outside its admissible domain.

    Raised for a fractional order outside (0, 1], a non-positive grid
    size, a non-positive final time and similar violations.
    """


class SchemeConstraintError(FocpError, ValueError):
    """A discretization scheme's structural requirement is violated.

    The Simpson scheme needs an even number of intervals; requesting an
    odd ``n`` raises this.
    """


class ProblemValidationError(FocpError, ValueError):
    """A problem definition failed validation.

    Carries the list of individual findings so callers can report all
    of them at once.
    """

    def __init__(self, findings):
        self.findings = list(findings)
        super().__init__("; ".join(self.findings))


class EvaluationError(FocpError, RuntimeError):
    """A user callback returned a non-finite or malformed value.

    Attributes
    ----------
    node : int or None
        Grid node index at which the bad value appeared, when known.
    what : str
        Name of the evaluator that failed ("dynamics", "cost", ...).
    """

    def __init__(self, what, node=None, detail=""):
        self.what = what
        self.node = node
        msg = f"evaluation of {what} failed"
        if node is not None:
            msg += f" at node {node}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
