"""Exception types shared across the package."""


class CFDebiasError(Exception):
    """Base class for all package errors."""


class InvalidShapeError(CFDebiasError, ValueError):
    pass


class InvalidIndexError(CFDebiasError, IndexError):
    pass


class InvalidArgumentError(CFDebiasError, ValueError):
    pass


class NumericFailureError(CFDebiasError, ArithmeticError):
    """Raised when a computation produces NaN or infinite values."""


class EmptyDatasetError(CFDebiasError, ValueError):
    pass


class InsufficientEntitiesError(CFDebiasError, ValueError):
    pass


class UndefinedMetricError(CFDebiasError, ValueError):
    pass


class DegenerateTestError(CFDebiasError, ValueError):
    pass


class LexiconFormatError(CFDebiasError, ValueError):
    pass
