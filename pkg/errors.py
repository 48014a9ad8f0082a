"""
Error types for the Tree of Concepts harness.

Every error carries a `context` dict (file, line, column, step, ...) so the CLI
can print a structured JSON failure.
"""


class TocError(Exception):
    """Base class for all harness errors"""

    def __init__(self, message, **context):
        super().__init__(message)
        self.message = message
        self.context = {k: v for k, v in context.items() if v is not None}

    def to_dict(self):
        return {
            "error": type(self).__name__,
            "message": self.message,
            "context": self.context,
        }

    def __str__(self):
        if not self.context:
            return self.message
        details = ", ".join(f"{k}={v}" for k, v in sorted(self.context.items()))
        return f"{self.message} ({details})"


# tabular-data
class MissingFile(TocError):
    pass


class SchemaMismatch(TocError):
    pass


class UnparseableCell(TocError):
    pass


class AllMissingColumn(TocError):
    pass


class NonContinuousSliceColumn(TocError):
    pass


class TooFewRows(TocError):
    pass


class InvalidSplitRatios(TocError):
    pass


class InvalidSpec(TocError):
    pass


# tree
class EmptyData(TocError):
    pass


class WidthMismatch(TocError):
    pass


class InvalidLeafId(TocError):
    pass


# nn-core
class InvalidDims(TocError):
    pass


class ClassOutOfRange(TocError):
    pass


class CacheMismatch(TocError):
    pass


class ShapeMismatch(TocError):
    pass


class EmptyBatcher(TocError):
    pass


# toc-model
class EmptySlice(TocError):
    pass


# metrics
class SingleClass(TocError):
    pass


class MissingEntries(TocError):
    pass


class EmptyInput(TocError):
    pass


class LengthMismatch(TocError):
    pass


# protocol / cli
class ConfigError(TocError):
    pass


class ProtocolError(TocError):
    pass


class MissingReport(TocError):
    pass


class FingerprintMismatch(TocError):
    pass
