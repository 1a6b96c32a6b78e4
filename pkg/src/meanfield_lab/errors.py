"""Exception hierarchy shared by all modules."""


class MeanFieldError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(MeanFieldError, ValueError):
    """Input failed a structural or physical validity check."""


class InstanceTooLarge(MeanFieldError):
    """A requested matrix would exceed the configured element cap."""


class ShapeError(ValidationError):
    pass


class NotHermitian(ValidationError):
    pass


class NotPSD(ValidationError):
    pass


class NotSwapSymmetric(ValidationError):
    pass


class NotSymmetric(ValidationError):
    pass


class BadArity(ValidationError):
    pass


class BasisMismatch(ValidationError):
    pass


class FreeTheory(ValidationError):
    """Raised where tau = hbar / (8 ||v||) is needed but ||v|| = 0."""


class TOutOfRange(ValidationError):
    pass


class ArityCapExceeded(InstanceTooLarge):
    pass


class PicardNoConvergence(MeanFieldError):
    pass


class GridTooCoarse(MeanFieldError):
    pass


class BoundViolation(MeanFieldError):
    """An emitted sweep record exceeds the coarse error bound."""

    def __init__(self, message, record=None, instance=None):
        super().__init__(message)
        self.record = record
        self.instance = instance
