"""Exception hierarchy shared by every nfd module."""


class NfdError(Exception):
    """Base class; ``kind`` is the machine-readable tag the CLI prints."""

    kind = "error"


class InvalidArgument(NfdError, ValueError):
    kind = "invalid-argument"


class UnsupportedRank(InvalidArgument):
    kind = "unsupported-rank"


class UnsupportedRange(InvalidArgument):
    kind = "unsupported-range"


class BudgetTooSmall(InvalidArgument):
    kind = "budget-too-small"


class TheoremPreconditionViolated(InvalidArgument):
    kind = "theorem-precondition-violated"


class SearchSpaceOverflow(InvalidArgument):
    kind = "search-space-overflow"


class FormatError(NfdError):
    kind = "format-error"

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
