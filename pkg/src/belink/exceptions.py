"""Exception hierarchy shared by every stage of the linker."""

from typing import Optional


class BeLinkError(Exception):
    """Base class for all errors raised by this package."""


class ContractError(BeLinkError, ValueError):
    """A caller violated a documented precondition (bad shapes, ranges, sizes)."""


class DataError(BeLinkError, ValueError):
    """Input data could not be parsed.

    ``lineno`` is 1-based and set whenever the failure maps to a line of a file.
    """

    def __init__(self, message: str, lineno: Optional[int] = None, path: Optional[str] = None):
        self.lineno = lineno
        self.path = path
        prefix = ""
        if path is not None:
            prefix += f"{path}:"
        if lineno is not None:
            prefix += f"{lineno}: " if path is not None else f"line {lineno}: "
        elif prefix:
            prefix += " "
        super().__init__(prefix + message)


class BackendError(BeLinkError, RuntimeError):
    """A remote model backend failed."""


class TransportError(BackendError):
    """Backend unreachable, timed out or returned an HTTP error after all retries."""


class ProtocolError(BackendError):
    """Backend answered, but the payload does not have the expected shape."""


class EmbeddingError(BackendError):
    """Embedding a batch failed; ``offset`` is the index of the batch's first text."""

    def __init__(self, message: str, offset: int = 0):
        self.offset = offset
        super().__init__(f"{message} (batch offset {offset})")
