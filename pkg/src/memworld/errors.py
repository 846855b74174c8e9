"""Exception types shared across the package."""


class MemworldError(Exception):
    """Base class for all package errors."""


class InvalidInputError(MemworldError):
    """An argument violates a documented precondition."""


class ConfigError(MemworldError):
    """A configuration file or field is missing or inconsistent."""


class FormatError(MemworldError):
    """A binary container is corrupt or truncated.

    ``offset`` is the byte position at which decoding failed.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class VersionError(FormatError):
    """A binary container carries an unsupported version tag."""


class ConflictError(MemworldError):
    """A serialized resource is busy (one in-flight operation at a time)."""


class NotFoundError(MemworldError):
    """A referenced resource does not exist."""
