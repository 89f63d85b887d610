"""Exception types shared across the package."""


class MvfuseError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(MvfuseError, ValueError):
    """A numeric parameter or array shape is outside its allowed domain."""


class InvalidConfigError(MvfuseError, ValueError):
    """A scenario or experiment configuration cannot be realized."""


class InvalidInputError(MvfuseError, ValueError):
    """Input geometry is degenerate (e.g. a polyline with fewer than 2 points)."""


class BudgetExceededError(MvfuseError, RuntimeError):
    """Exhaustive subset evaluation would exceed the evaluation budget."""


class StageError(MvfuseError, RuntimeError):
    """A pipeline stage failed; ``stage`` names the failing stage."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
