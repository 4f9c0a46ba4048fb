"""Exception hierarchy.

Each family maps onto a CLI exit code: validation (2), numerical (3), I/O (4).
"""


class FiberSpecError(Exception):
    exit_code = 1


class ValidationError(FiberSpecError, ValueError):
    exit_code = 2


class NumericalError(FiberSpecError, ArithmeticError):
    exit_code = 3


class NoSolutionError(NumericalError):
    pass


class NonConvergenceError(NumericalError):
    pass


class EnvelopeError(NumericalError):
    """Rejection-sampling envelope did not bound the target density."""


class EdgeDetectionError(NumericalError):
    pass


class FitError(NumericalError):
    pass


class FormatError(FiberSpecError, IOError):
    exit_code = 4


class MalformedHeaderError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class TruncatedRecordError(FormatError):
    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset
