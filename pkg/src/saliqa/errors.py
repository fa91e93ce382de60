"""Exception hierarchy shared by all saliqa modules."""


class SaliqaError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(SaliqaError, ValueError):
    """An argument violates a documented precondition (shape, range, size)."""


class InsufficientDataError(SaliqaError, ValueError):
    """Too few samples to fit the requested component."""


class InvalidStateError(SaliqaError, RuntimeError):
    """Operation requires a fitted model or an open resource that is missing."""


class UndefinedMetricError(SaliqaError, ValueError):
    """A correlation metric is undefined for the given inputs (e.g. constant vector)."""


class FormatError(SaliqaError, ValueError):
    """A serialized model file is malformed or has an unsupported version."""
