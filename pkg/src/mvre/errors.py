"""Exception types shared across the package."""


class MvreError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(MvreError):
    """A value object violates one of its invariants."""


class LoadError(MvreError):
    """A dataset file could not be parsed; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SamplingError(MvreError):
    """An episode could not be sampled (e.g. a relation has no instances)."""


class EncodingError(MvreError):
    """An instance cannot be encoded into a prompt within the length budget."""


class InitError(MvreError):
    """Virtual-word initialization failed for a relation."""


class NumericError(MvreError):
    """A numeric precondition failed (e.g. zero-norm embedding)."""


class AnalysisError(MvreError):
    """An analysis input is invalid (e.g. unknown aspect word)."""


class UndefinedRatioError(MvreError):
    """Similarity ratio is undefined because the reference score is zero."""
