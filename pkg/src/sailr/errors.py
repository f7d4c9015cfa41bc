"""Exception types shared across the package."""


class SailrError(Exception):
    """Base class for all package errors."""


class ValidationError(SailrError):
    """One or more invariants violated; carries the full list of messages."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class TimeDomainError(SailrError, ValueError):
    """A time argument fell outside the covered interval."""


class GridMismatchError(SailrError, ValueError):
    """Two grid-aligned series do not share the same grid."""


class BlowupError(SailrError):
    """Integration produced a non-finite value.

    ``step`` is the 1-based index of the step that first went non-finite.
    """

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"integration blow-up at step {step}")


class FeasibilityError(SailrError, ValueError):
    """A candidate or state violated a hard feasibility constraint."""


class StallError(SailrError):
    """Line search could not make progress; ``best`` holds the best iterate."""

    def __init__(self, message, best=None):
        self.best = best
        super().__init__(message)


class StageStallError(StallError):
    """A penalty-continuation stage failed to converge; ``best`` is its result."""
