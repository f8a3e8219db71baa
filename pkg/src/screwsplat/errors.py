"""Exception hierarchy."""


class ScrewSplatError(Exception):
    """Base class for every error raised by this package."""


class InputError(ScrewSplatError, ValueError):
    """A precondition on caller-supplied data does not hold."""


class NumericError(ScrewSplatError, ArithmeticError):
    """The numerics left their valid domain."""


class DegenerateAxisError(InputError):
    """The direction part of a raw screw vector has (near) zero norm."""


class NotRevoluteError(InputError):
    pass


class TypeMismatchError(InputError):
    pass


class InvalidConfigError(InputError):
    pass


class InvalidSpecError(InputError):
    pass


class ShapeMismatchError(InputError):
    pass


class TooSmallError(InputError):
    """Image smaller than the SSIM window."""


class EmptySetError(InputError):
    pass


class EmptySelectionError(InputError):
    """No Gaussian carries mass for the requested part."""


class OutOfLimitsError(InputError):
    pass


class EmptyObservationsError(InputError):
    pass


class DegenerateGoalError(InputError):
    """Goal direction in embedding space has zero length."""


class DegenerateSpaceError(InputError):
    """Search space has no free dimension, or too many."""


class DeadScrewError(InputError):
    pass


class EmptyPartError(InputError):
    pass


class InvalidStepError(InputError):
    pass


class SingularCovarianceError(NumericError):
    """A projected covariance stayed singular after dilation."""


class NonFiniteLossError(NumericError):
    def __init__(self, message: str, dump_path: str | None = None):
        super().__init__(message)
        self.dump_path = dump_path
