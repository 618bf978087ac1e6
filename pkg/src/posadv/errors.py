"""Exception hierarchy shared by every stage of the attack pipeline."""


class PosAdvError(Exception):
    """Base class for all package errors."""


# text front end
class TaggerModelMissing(PosAdvError):
    pass


class EmptyCorpus(PosAdvError):
    pass


class MalformedLine(PosAdvError):
    def __init__(self, line_no: int, message: str = ""):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message or 'wrong field count'}")


class DimensionMismatch(PosAdvError):
    pass


# numeric kernels
class ShapeMismatch(PosAdvError):
    pass


class EmptyInput(PosAdvError):
    pass


class DegenerateBatch(PosAdvError):
    pass


class LengthMismatch(PosAdvError):
    pass


# models
class InsufficientData(PosAdvError):
    pass


class UntrainedModel(PosAdvError):
    pass


class EmptyTestSet(PosAdvError):
    pass


class SingleClassDataset(PosAdvError):
    pass


# attack phases
class PositionOutOfRange(PosAdvError):
    pass


class DuplicatePosition(PosAdvError):
    pass


class ReviewTooShort(PosAdvError):
    pass


class InsufficientCandidates(PosAdvError):
    pass


# data ingestion and orchestration
class MalformedRow(PosAdvError):
    def __init__(self, row: int, message: str = ""):
        self.row = row
        super().__init__(f"row {row}: {message or 'malformed'}")


class UnknownLabel(PosAdvError):
    def __init__(self, value):
        self.value = value
        super().__init__(f"unknown label {value!r}")


class MissingFile(PosAdvError):
    pass


class MissingArtifact(PosAdvError):
    pass


class StageFailed(PosAdvError):
    """Raised by the orchestrator; carries the name of the failing stage."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
