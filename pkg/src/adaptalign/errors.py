"""Exception hierarchy shared across the package."""


class AdaptAlignError(Exception):
    """Base class for all package errors."""


class ShapeError(AdaptAlignError, ValueError):
    pass


class DimensionError(AdaptAlignError, ValueError):
    pass


class NonFiniteError(AdaptAlignError, ValueError):
    pass


class DecompositionError(AdaptAlignError, RuntimeError):
    pass


class MatrixFormatError(AdaptAlignError):
    """Raised when a matrix file cannot be decoded."""


class BadMagicError(MatrixFormatError):
    pass


class VersionMismatchError(MatrixFormatError):
    pass


class TruncatedPayloadError(MatrixFormatError):
    pass


class NonFinitePayloadError(MatrixFormatError, NonFiniteError):
    pass


class ZeroNormError(AdaptAlignError, ValueError):
    pass


class TrainingError(AdaptAlignError, RuntimeError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class SelectionError(AdaptAlignError, ValueError):
    pass
