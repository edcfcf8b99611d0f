"""Exception hierarchy.

The CLI maps the three base classes onto exit codes: ``FormatError`` -> 2,
``CapacityError`` -> 3, ``UsageError`` -> 64.
"""

from __future__ import annotations


class TernsimError(Exception):
    pass


class FormatError(TernsimError):
    """Malformed data: bad codes, bad shapes, corrupt files."""


class CapacityError(TernsimError):
    """A model does not fit the memory it was asked to fit in."""


class UsageError(TernsimError):
    """An unsupported combination of otherwise valid parameters."""


class InvalidCode(FormatError):
    def __init__(self, code: int, offset: int | None = None):
        self.code = int(code)
        self.offset = offset
        where = "" if offset is None else f" at byte offset {offset}"
        super().__init__(f"invalid packed code {self.code}{where} (must be < 243)")


class ShapeMismatch(FormatError):
    pass


class LengthMismatch(FormatError):
    pass


class BadMagic(FormatError):
    pass


class UnsupportedVersion(FormatError):
    pass


class TruncatedPayload(FormatError):
    pass


class ConfigError(FormatError):
    pass


class InvalidBatch(UsageError):
    pass


class InvalidCards(UsageError):
    pass


class InsufficientCapacity(CapacityError):
    def __init__(self, required: float, available: float, what: str = "bytes"):
        self.required = required
        self.available = available
        super().__init__(
            f"insufficient capacity: need {required:,.0f} {what}, only {available:,.0f} available"
        )


class ModelTooLarge(CapacityError):
    pass
