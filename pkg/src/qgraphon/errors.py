"""Exception hierarchy shared by all modules."""


class QGraphonError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 3


class DimensionMismatch(QGraphonError, ValueError):
    exit_code = 2


class IndexCollision(QGraphonError, ValueError):
    exit_code = 2


class ZeroTrace(QGraphonError, ArithmeticError):
    pass


class RangeError(QGraphonError, ValueError):
    exit_code = 2


class TooLarge(QGraphonError):
    exit_code = 4


class NonFiniteNoise(QGraphonError, ArithmeticError):
    pass


class NonUnitaryL(QGraphonError, ValueError):
    exit_code = 2


class GridMismatch(QGraphonError, ValueError):
    exit_code = 2


class NoConvergence(QGraphonError, ArithmeticError):
    """Picard iteration hit its iteration cap; ``report`` holds the history."""

    def __init__(self, msg, report=None, path=None):
        super().__init__(msg)
        self.report = report
        self.path = path


class ParseError(QGraphonError, ValueError):
    exit_code = 2


class ValidationError(QGraphonError, ValueError):
    """Configuration is structurally valid JSON but semantically wrong.

    ``errors`` is a list of ``(field_path, reason)`` pairs, one per violated
    field.
    """

    exit_code = 2

    def __init__(self, errors):
        self.errors = list(errors)
        lines = "; ".join(f"{path}: {reason}" for path, reason in self.errors)
        super().__init__(lines)
