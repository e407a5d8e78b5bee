from __future__ import annotations


class OSVPropError(Exception):
    """Base class for all errors raised by this package."""


class RecordError(OSVPropError, ValueError):
    """A record is structurally unusable (missing id, bad field types)."""

    def __init__(self, message: str, source: str | None = None) -> None:
        self.source = source
        super().__init__(f"{source}: {message}" if source else message)


class RecordParseError(RecordError):
    """The record is not valid JSON."""

    def __init__(self, message: str, offset: int, source: str | None = None) -> None:
        self.offset = offset
        super().__init__(f"malformed JSON at byte {offset}: {message}", source)


class UnknownCVEError(OSVPropError, KeyError):
    pass


class EmptyInputError(OSVPropError, ValueError):
    pass


class InsufficientDataError(OSVPropError, ValueError):
    """Too few observations (or no variance) to run a test."""


class EmptyCorpusError(OSVPropError):
    """No record survived ingestion filters."""
