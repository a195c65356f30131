"""Exception hierarchy shared across the toolkit.

Exit-code mapping used by the CLI: usage errors -> 1, ParseError and
ValidationError -> 2, everything else raised from toolkit code -> 3.
"""


class CausalRecError(Exception):
    """Base class for all toolkit errors."""


class ParseError(CausalRecError):
    """A file could not be parsed; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(CausalRecError):
    """Input data violates a dataset or configuration invariant."""


class RddError(CausalRecError):
    """Regression-discontinuity analysis is not applicable to the input."""


class TrainingError(CausalRecError):
    """Model optimization failed (non-finite parameters, bad labels)."""


class MetricUndefinedError(CausalRecError):
    """A metric has no admissible observations to average over."""
