"""Exception hierarchy; the CLI maps each class to an exit code."""


class UsageError(ValueError):
    """Invalid arguments, shapes or configuration (exit code 2)."""


class FormatError(ValueError):
    """Malformed raster, mask or model file (exit code 3)."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericalError(ArithmeticError):
    """Non-finite loss or parameter encountered (exit code 4)."""
