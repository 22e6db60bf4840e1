"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value is missing, malformed, or violates a constraint.

    The message always names the offending field.
    """


class ProtocolError(RuntimeError):
    """An internal invariant of the synchronization protocol was violated."""


class NumericError(RuntimeError):
    """A non-finite value appeared during training.

    Carries the iteration index at which the problem was detected.
    """

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration
