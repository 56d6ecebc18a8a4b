"""Shared exception types."""


class InvalidArgument(ValueError):
    """A caller-supplied value violates an operation's precondition."""


class StateError(RuntimeError):
    """An operation was invoked before its required state existed."""


class FormatError(ValueError):
    """A serialized file is malformed; carries the byte offset when known."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NonFiniteError(ArithmeticError):
    """A NaN or Inf escaped a numeric operation."""
