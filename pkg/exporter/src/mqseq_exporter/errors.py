class ExporterError(Exception):
    """Base class for exporter failures."""


class SourceUnavailable(ExporterError):
    def __init__(self, model_id: str, cause: Exception | None = None):
        self.model_id = model_id
        self.cause = cause
        detail = f": {cause}" if cause else ""
        super().__init__(f"source model {model_id!r} could not be loaded{detail}")


class DimCheckFailed(ExporterError):
    def __init__(self, expected: int, actual: int):
        self.expected = expected
        self.actual = actual
        super().__init__(f"expected embedding width {expected}, source model has {actual}")


class ParityFailure(ExporterError):
    pass
