class ValidationError(ValueError):
    """Input violates a documented invariant."""


class FormatError(ValidationError):
    """Malformed file payload. ``offset`` is the byte (or line) position."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class BadMagicError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class NonFiniteError(FormatError):
    pass
