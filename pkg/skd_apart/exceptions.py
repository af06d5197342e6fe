# -*- coding: utf-8 -*-


class SkdApartError(Exception):
    """Base class of every error raised by skd-apart."""


class ImproperlyConfigured(SkdApartError):
    """Experiment document or generator/training parameters are invalid."""


class ShapeError(SkdApartError, ValueError):
    pass


class UnknownOperationError(SkdApartError, KeyError):
    pass


class BackwardError(SkdApartError, RuntimeError):
    pass


class StaleTapsError(SkdApartError, RuntimeError):
    pass


class NonFiniteError(SkdApartError, FloatingPointError):
    """
    Raised when a loss, gradient or function evaluation is not finite.

    :param index: coordinate or batch element that produced the value
    """

    def __init__(self, message, index=None):
        super(NonFiniteError, self).__init__(message)
        self.index = index


class NonDifferentiablePointError(NonFiniteError):
    pass


class BoundViolation(SkdApartError, ValueError):
    pass


class BudgetExceededError(SkdApartError, ValueError):

    def __init__(self, message, required=None):
        super(BudgetExceededError, self).__init__(message)
        self.required = required


class DatasetFormatError(SkdApartError, ValueError):
    pass


class EmptyDatasetError(SkdApartError, ValueError):
    pass


class CheckpointError(SkdApartError, ValueError):
    pass


class RunDirectoryLocked(SkdApartError, RuntimeError):
    pass


class TrainingHalted(SkdApartError, RuntimeError):
    """
    Raised when a training epoch meets a non-finite loss. ``record`` holds
    the metrics accumulated before the failure.
    """

    def __init__(self, message, record=None):
        super(TrainingHalted, self).__init__(message)
        self.record = record
