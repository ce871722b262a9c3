"""Exception hierarchy.

Every error raised deliberately by the package derives from
:class:`NNReorderError`; most also derive from a matching builtin so callers
can keep catching ``ValueError``/``IndexError`` where that reads naturally.
"""


class NNReorderError(Exception):
    """Base class for all package errors."""


class OutOfBounds(NNReorderError, IndexError):
    pass


class DuplicateEntry(NNReorderError, ValueError):
    pass


class SizeMismatch(NNReorderError, ValueError):
    pass


class DimMismatch(NNReorderError, ValueError):
    pass


class NotSquare(NNReorderError, ValueError):
    pass


class KTooLarge(NNReorderError, ValueError):
    pass


class NonPositiveBandwidth(NNReorderError, ValueError):
    pass


class DegenerateData(NNReorderError, ValueError):
    pass


class DimTooHigh(NNReorderError, ValueError):
    pass


class LevelOutOfRange(NNReorderError, ValueError):
    pass


class EmptyPattern(NNReorderError, ValueError):
    pass


class TooLarge(NNReorderError, ValueError):
    pass


class SpanMismatch(NNReorderError, ValueError):
    pass


class LocalIndexOverflow(NNReorderError, OverflowError):
    pass


class NonFiniteValue(NNReorderError, ValueError):
    pass


class OrderingMismatch(NNReorderError, ValueError):
    pass


class ZeroWeight(NNReorderError, ArithmeticError):
    """All kernel weights of a mean-shift target underflowed to zero."""

    def __init__(self, target: int, message: str | None = None):
        self.target = target
        super().__init__(message or f"all kernel weights are zero for target {target}")


class NotDivisible(NNReorderError, ValueError):
    pass


class TooWide(NNReorderError, ValueError):
    pass


class TooMany(NNReorderError, ValueError):
    pass


class MalformedRecord(NNReorderError, ValueError):
    pass


class InconsistentDim(NNReorderError, ValueError):
    pass


class EmptyFile(NNReorderError, ValueError):
    pass


class ChecksumMismatch(NNReorderError, RuntimeError):
    pass


class FormatError(NNReorderError, ValueError):
    """A text or binary interchange file could not be parsed."""


class PhaseError(NNReorderError, RuntimeError):
    """A pipeline failure attributed to the phase that raised it."""

    def __init__(self, phase: str, cause: BaseException):
        super().__init__(f"[{phase}] {type(cause).__name__}: {cause}")
        self.phase = phase
        self.cause = cause
