"""Exception types shared across the package.

Every domain failure derives from :class:`EdmsegError` so callers (and the
command-line front end) can separate domain errors from programming errors.
"""

from __future__ import annotations

from dataclasses import dataclass


class EdmsegError(Exception):
    """Base class for all domain errors raised by edmseg."""


@dataclass(frozen=True)
class Violation:
    """A single validation failure, tied to the segment that caused it."""

    kind: str
    index: int | None
    message: str

    def __str__(self) -> str:
        where = "" if self.index is None else f" (segment {self.index})"
        return f"{self.kind}{where}: {self.message}"


class AnnotationError(EdmsegError, ValueError):
    """An annotation failed validation.

    ``violations`` lists every problem found, not only the first one.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))

    @property
    def kinds(self):
        return [v.kind for v in self.violations]


class EmptyAnnotation(EdmsegError, ValueError):
    pass


class CorpusError(EdmsegError, ValueError):
    pass


class Infeasible(CorpusError):
    pass


class Unbucketable(CorpusError):
    pass


class ShortStratum(CorpusError):
    pass


class BadCounts(CorpusError):
    pass


class StreamError(EdmsegError, ValueError):
    pass


class BadMagic(StreamError):
    pass


class BadVersion(StreamError):
    pass


class TruncatedFile(StreamError):
    pass


class NonFiniteValue(StreamError):
    pass


class WrongStreamCount(StreamError):
    pass


class EmptyStream(StreamError):
    pass


class BadSpec(EdmsegError, ValueError):
    pass


class ShapeMismatch(EdmsegError, ValueError):
    pass


class NumericFault(EdmsegError, ArithmeticError):
    """A primitive or training step produced NaN or Inf."""

    def __init__(self, message, step=None):
        self.step = step
        super().__init__(message if step is None else f"{message} (step {step})")


class NotScalarLoss(EdmsegError, ValueError):
    pass


class BadConfig(EdmsegError, ValueError):
    pass


class TooLong(EdmsegError, ValueError):
    pass


class InconsistentDuration(EdmsegError, ValueError):
    pass


class EmptyDataset(EdmsegError, ValueError):
    pass


class CheckpointError(EdmsegError, ValueError):
    pass


class BadBoundaries(EdmsegError, ValueError):
    pass


class Unsorted(EdmsegError, ValueError):
    pass


class DurationMismatch(EdmsegError, ValueError):
    pass
