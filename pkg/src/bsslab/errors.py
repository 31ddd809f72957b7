"""Exception types raised across the toolkit."""


class BssLabError(Exception):
    """Base class for all toolkit errors."""


class InvalidInput(BssLabError, ValueError):
    pass


class InvalidConfig(BssLabError, ValueError):
    pass


class InvalidScenario(BssLabError, ValueError):
    pass


class InvalidReference(BssLabError, ValueError):
    pass


class UnsupportedGeometry(BssLabError, ValueError):
    """Raised when the microphone count differs from the source count."""


class SingularUpdate(BssLabError, ArithmeticError):
    """A demixing update hit an ill-conditioned system.

    ``bins`` holds the offending frequency indices when the failure came
    from a batched update.
    """

    def __init__(self, message, bins=None, condition=None):
        super().__init__(message)
        self.bins = bins
        self.condition = condition
