"""
Transfer Errors
===============
Error hierarchy shared by every stage of the pipeline.

Each error carries a machine-readable code. The command-line runner maps
codes to exit statuses:
- 1: usage / configuration problems
- 2: data problems (bad files, bad matrices, bad shapes)
- 3: numerical divergence
"""

from enum import Enum
from typing import Any, Dict, Optional


class ErrorCode(str, Enum):
    DUPLICATE_ENTRY = "DuplicateEntry"
    OUT_OF_BOUNDS = "OutOfBounds"
    INVALID_RATING = "InvalidRating"
    EMPTY_MATRIX = "EmptyMatrix"
    SHAPE_MISMATCH = "ShapeMismatch"
    NEGATIVE_FACTOR = "NegativeFactor"
    DIVERGED = "Diverged"
    MEMBERSHIP_SIZE_MISMATCH = "MembershipSizeMismatch"
    TOO_FEW_ENTRIES = "TooFewEntries"
    EMPTY_TEST_SET = "EmptyTestSet"
    FILE_NOT_FOUND = "FileNotFound"
    PARSE_ERROR = "ParseError"
    EMPTY_AFTER_FILTER = "EmptyAfterFilter"
    CONFIG_ERROR = "ConfigError"
    USAGE_ERROR = "UsageError"


EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3

_EXIT_CODES = {
    ErrorCode.CONFIG_ERROR: EXIT_USAGE,
    ErrorCode.USAGE_ERROR: EXIT_USAGE,
    ErrorCode.DIVERGED: EXIT_DIVERGED,
}


class TransferError(Exception):
    """Base class for all pipeline errors."""

    code: ErrorCode = ErrorCode.USAGE_ERROR

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details: Dict[str, Any] = details

    @property
    def exit_code(self) -> int:
        return _EXIT_CODES.get(self.code, EXIT_DATA)

    def to_line(self) -> str:
        """Single-line form written by the CLI on failure."""
        text = " ".join(self.message.split())
        return f"error={self.code.value} message={text}"

    def to_dict(self) -> dict:
        return {"code": self.code.value, "message": self.message, "details": self.details}


class DuplicateEntry(TransferError):
    code = ErrorCode.DUPLICATE_ENTRY

    def __init__(self, user: int, item: int):
        super().__init__(f"duplicate rating for ({user}, {item})", user=user, item=item)
        self.user = user
        self.item = item


class OutOfBounds(TransferError):
    code = ErrorCode.OUT_OF_BOUNDS

    def __init__(self, user: int, item: int):
        super().__init__(f"entry ({user}, {item}) outside matrix bounds", user=user, item=item)
        self.user = user
        self.item = item


class InvalidRating(TransferError):
    code = ErrorCode.INVALID_RATING

    def __init__(self, value: Any, r_max: Optional[int] = None):
        super().__init__(f"invalid rating {value} (allowed 1..{r_max})", value=value, r_max=r_max)
        self.value = value


class EmptyMatrix(TransferError):
    code = ErrorCode.EMPTY_MATRIX


class ShapeMismatch(TransferError):
    code = ErrorCode.SHAPE_MISMATCH


class NegativeFactor(TransferError):
    code = ErrorCode.NEGATIVE_FACTOR


class Diverged(TransferError):
    code = ErrorCode.DIVERGED


class MembershipSizeMismatch(TransferError):
    code = ErrorCode.MEMBERSHIP_SIZE_MISMATCH


class TooFewEntries(TransferError):
    code = ErrorCode.TOO_FEW_ENTRIES


class EmptyTestSet(TransferError):
    code = ErrorCode.EMPTY_TEST_SET


class DatasetNotFound(TransferError):
    code = ErrorCode.FILE_NOT_FOUND

    def __init__(self, path: str):
        super().__init__(f"dataset file not found: {path}", path=str(path))
        self.path = str(path)


class ParseError(TransferError):
    code = ErrorCode.PARSE_ERROR

    def __init__(self, path: str, line_no: int, reason: str):
        super().__init__(f"{path}:{line_no}: {reason}", path=str(path), line_no=line_no)
        self.line_no = line_no


class EmptyAfterFilter(TransferError):
    code = ErrorCode.EMPTY_AFTER_FILTER


class ConfigError(TransferError):
    code = ErrorCode.CONFIG_ERROR


class UsageError(TransferError):
    code = ErrorCode.USAGE_ERROR
