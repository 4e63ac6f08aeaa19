"""Exception hierarchy shared across the package."""


class FundusnetError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(FundusnetError):
    """An argument violates a documented precondition."""


class DegenerateInputError(FundusnetError):
    """Input is structurally valid but numerically unusable (e.g. zero variance)."""


class ShapeError(FundusnetError):
    """Array dimensions are inconsistent with the operation."""


class CorruptModelError(FundusnetError):
    """A model file failed validation (magic, CRC, or declared shapes)."""


class TrainingDivergedError(FundusnetError):
    """Non-finite values appeared in gradients or parameters."""


class DataError(FundusnetError):
    """A dataset file is missing, unreadable, or inconsistent."""
