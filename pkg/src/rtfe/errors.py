class DatasetError(ValueError):
    """Malformed or inconsistent input data."""


class NumericalError(FloatingPointError):
    """Training produced a non-finite value."""

    def __init__(self, message, timestamp=None):
        super().__init__(message)
        self.timestamp = timestamp
