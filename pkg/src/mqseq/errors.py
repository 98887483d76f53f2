"""Exception hierarchy shared across the pipeline."""

from __future__ import annotations


class MqseqError(Exception):
    """Base class for all pipeline errors."""


# --- dataset ingest ---------------------------------------------------------

class MalformedRecord(MqseqError):
    def __init__(self, line_number: int, reason: str = "unparseable line"):
        self.line_number = line_number
        self.reason = reason
        super().__init__(f"line {line_number}: {reason}")


class MissingField(MqseqError):
    def __init__(self, field: str, line_number: int):
        self.field = field
        self.line_number = line_number
        super().__init__(f"line {line_number}: missing required field {field!r}")


class EmptyInput(MqseqError):
    pass


# --- encoder frontend -------------------------------------------------------

class EmptyBatch(MqseqError):
    pass


class EmptyText(MqseqError):
    def __init__(self, index: int):
        self.index = index
        super().__init__(f"text at index {index} is empty after trimming")


class ModelNotFound(MqseqError):
    pass


class FormatMismatch(MqseqError):
    def __init__(self, expected: str, found: str):
        self.expected = expected
        self.found = found
        super().__init__(f"expected model format {expected!r}, found {found!r}")


class DimMismatch(MqseqError):
    def __init__(self, declared: int, actual: int):
        self.declared = declared
        self.actual = actual
        super().__init__(f"declared embedding width {declared} but model produces {actual}")


# --- embedding pipeline -----------------------------------------------------

class EmptyRow(MqseqError):
    def __init__(self, index: int):
        self.index = index
        super().__init__(f"row {index} has an all-zero attention mask")


class EmbedBatchError(MqseqError):
    """Tokenizer or backend failure, annotated with the offending batch index."""

    def __init__(self, batch_index: int, cause: Exception):
        self.batch_index = batch_index
        self.cause = cause
        super().__init__(f"batch {batch_index}: {cause}")


class BadMagic(MqseqError):
    pass


class VersionUnsupported(MqseqError):
    pass


class TruncatedFile(MqseqError):
    pass


# --- classifier -------------------------------------------------------------

class ShapeMismatch(MqseqError):
    pass


class LabelOutOfRange(MqseqError):
    pass


class InsufficientData(MqseqError):
    pass


class ShapeHeaderMismatch(MqseqError):
    pass


# --- evaluation -------------------------------------------------------------

class LengthMismatch(MqseqError):
    pass


# --- t-SNE ------------------------------------------------------------------

class TooFewPoints(MqseqError):
    pass


class CalibrationFailure(MqseqError):
    def __init__(self, index: int, reason: str = "bandwidth search interval collapsed"):
        self.index = index
        self.reason = reason
        super().__init__(f"point {index}: {reason}")


class NumericalDivergence(MqseqError):
    def __init__(self, iteration: int):
        self.iteration = iteration
        super().__init__(f"non-finite coordinates at iteration {iteration}")
