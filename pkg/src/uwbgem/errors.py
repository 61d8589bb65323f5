"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array dimensions do not match what the callee expects."""


class NoSignalError(ValueError):
    """A CIR carries no energy (all zeros)."""


class OutOfWindowError(ValueError):
    """A path delay falls outside the observation window."""


class SchemaError(ValueError):
    """A file does not follow the documented column layout."""


class ParseError(ValueError):
    """A row of a data file could not be parsed."""

    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class InvalidStateError(RuntimeError):
    """An object is used before it is ready (e.g. stale cache, unfitted model)."""
