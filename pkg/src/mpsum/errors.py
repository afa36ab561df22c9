"""Exception hierarchy shared by every mpsum module."""


class MPSumError(Exception):
    """Base class for all library errors."""


# numerics
class InvalidMatrix(MPSumError, ValueError):
    pass


class NoConvergence(MPSumError, RuntimeError):
    pass


class DomainError(MPSumError, ValueError):
    pass


# encoder
class EmptyCorpus(MPSumError, ValueError):
    pass


class InvalidSize(MPSumError, ValueError):
    pass


class UnstableA(MPSumError, ValueError):
    pass


class ShapeError(MPSumError, ValueError):
    pass


class NoTrainableParams(MPSumError, ValueError):
    pass


class InternalError(MPSumError, RuntimeError):
    pass


# compression
class OutOfBall(MPSumError, ValueError):
    pass


class DegenerateInput(MPSumError, ValueError):
    pass


class InvalidK(MPSumError, ValueError):
    pass


# head / training
class BatchTooSmall(MPSumError, ValueError):
    pass


class InvalidLabel(MPSumError, ValueError):
    pass


class InvalidStep(MPSumError, ValueError):
    pass


class DegenerateLabels(MPSumError, ValueError):
    pass


# text pipeline
class ParseError(MPSumError, ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DuplicateId(MPSumError, ValueError):
    pass


class NoGold(MPSumError, ValueError):
    pass


class EmptyReview(MPSumError, ValueError):
    pass


class ParaphraseError(MPSumError, RuntimeError):
    pass


class ProtocolError(ParaphraseError):
    pass


# persistence / configuration
class CheckpointError(MPSumError, ValueError):
    pass


class ConfigError(MPSumError, ValueError):
    pass
