"""Exception types shared across the package."""


class ArgumentError(ValueError):
    """Raised when a caller passes invalid arguments (bad shape, scale, etc.)."""


class FormatError(ValueError):
    """Raised when packed bytes or a serialized file are malformed.

    ``offset`` is the byte position at which parsing failed, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)
        self.offset = offset
