"""Exception hierarchy shared by all advids modules."""


class AdvIDSError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(AdvIDSError, ValueError):
    pass


class ShapeError(AdvIDSError, ValueError):
    pass


class DataError(AdvIDSError, ValueError):
    pass


class NumericError(AdvIDSError, ArithmeticError):
    pass


class NumericDivergenceError(NumericError):
    """Training loss became NaN or infinite."""

    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"loss diverged at epoch {epoch}")


class DegenerateGradientError(NumericError):
    pass


class ConflictError(AdvIDSError, ArithmeticError):
    """Dempster combination of totally conflicting evidence (kappa == 1)."""

    def __init__(self, message: str, indices: tuple[int, ...] = ()):
        self.indices = tuple(indices)
        super().__init__(message)


class InputError(AdvIDSError, ValueError):
    pass
