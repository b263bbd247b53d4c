"""Exception hierarchy shared by every gradmatch module."""


class GradMatchError(Exception):
    """Base class for all library errors."""


class IdxFormatError(GradMatchError, ValueError):
    pass


class BadMagic(IdxFormatError):
    pass


class CountMismatch(IdxFormatError):
    pass


class TruncatedFile(IdxFormatError):
    pass


class EmptyResult(GradMatchError, ValueError):
    pass


class EmptyClass(GradMatchError, ValueError):
    pass


class NoConvergence(GradMatchError, RuntimeError):
    def __init__(self, max_iters, message=None):
        self.max_iters = max_iters
        super().__init__(message or f"solver did not converge in {max_iters} iterations")


class DegenerateBank(GradMatchError, ValueError):
    pass


class NonFiniteGradient(GradMatchError, FloatingPointError):
    pass


class NonFiniteLoss(GradMatchError, FloatingPointError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ZeroGradient(GradMatchError, ValueError):
    pass


class TooLarge(GradMatchError, ValueError):
    pass
