"""Exception types. The CLI maps them onto exit codes."""


class DataError(ValueError):
    """Malformed or missing input data (exit code 2)."""


class NumericalError(RuntimeError):
    """Non-finite values during computation (exit code 3)."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot or {}
