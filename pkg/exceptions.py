# /ucsl/exceptions.py
"""
Error types raised by the library.

Every error carries a human-readable ``detail`` and the process ``exit_code``
the CLI should use when it escapes a command: 1 for usage/config problems,
2 for problems with the data being processed.
"""


class UcslError(Exception):
    """Base error, modelled on an HTTP error: a code plus a detail string."""

    exit_code: int = 2

    def __init__(self, detail: str):
        self.detail = detail
        super().__init__(detail)


# --- Configuration errors (exit code 1) ---


class ConfigError(UcslError):
    exit_code = 1


class InvalidParameter(ConfigError):
    """A numeric argument is outside its documented range."""


class InvalidSpec(ConfigError):
    """A scenario specification violates one of its invariants."""

    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(f"Invalid scenario spec: {reason}")


class ConfigFileError(ConfigError):
    """The config file is missing, unreadable or has unknown keys."""


# --- Data errors (exit code 2) ---


class DataError(UcslError):
    exit_code = 2


class ZeroColumn(DataError):
    def __init__(self, index: int):
        self.index = index
        super().__init__(f"Embedding column {index} has (near) zero norm and cannot be normalized.")


class DimMismatch(DataError):
    def __init__(self, left: int, right: int):
        super().__init__(f"Embedding dimensions differ: {left} vs {right}.")


class ShapeMismatch(DataError):
    pass


class EmptyMatrix(DataError):
    pass


class EmptyFrame(DataError):
    pass


class LengthMismatch(DataError):
    pass


class NonFiniteLoss(DataError):
    pass


class OutOfRange(DataError):
    pass


class DegenerateBox(DataError):
    def __init__(self, box):
        super().__init__(f"Box {tuple(box)} has non-positive width or height.")


class NonFiniteState(DataError):
    pass


class NonMonotoneFrames(DataError):
    pass


class ParseError(DataError):
    def __init__(self, line: int, reason: str):
        self.line = line
        self.reason = reason
        super().__init__(f"Line {line}: {reason}")


class IdRequired(DataError):
    def __init__(self, line: int):
        self.line = line
        super().__init__(f"Line {line}: ground-truth records need an identity >= 1.")


class RecordValidationError(DataError):
    def __init__(self, index: int, reason: str):
        self.index = index
        super().__init__(f"Record {index}: {reason}")


class HeaderMismatch(DataError):
    pass


class CountMismatch(DataError):
    def __init__(self, expected: int, actual: int):
        self.expected = expected
        self.actual = actual
        super().__init__(f"Embedding sidecar holds {actual} rows but the record file has {expected}.")


class EmptyGroundTruth(DataError):
    pass
