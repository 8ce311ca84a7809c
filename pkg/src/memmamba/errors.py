"""Exception hierarchy shared by every module in the package."""


class MemMambaError(Exception):
    pass


class DimensionError(MemMambaError, ValueError):
    """Shapes of the operands do not agree."""


class ParameterError(MemMambaError, ValueError):
    """A scalar argument is outside its admissible range."""


class InstabilityError(ParameterError):
    """A transition norm is >= 1, so no finite state bound exists."""


class SingularityError(MemMambaError, ArithmeticError):
    """A linear system has no unique solution."""


class InputError(MemMambaError, ValueError):
    """User-supplied data (tokens, files) is unusable."""


class NumericalError(MemMambaError, FloatingPointError):
    """A NaN or Inf appeared where a finite value is required."""


class DivergenceError(NumericalError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"training diverged at step {step} (loss={loss!r})")
        self.step = step
        self.loss = loss
