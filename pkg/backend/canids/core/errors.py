"""Error hierarchy shared by every canids module."""


class CanIdsError(Exception):
    """Base class for every error raised by canids."""


class ConfigError(CanIdsError, ValueError):
    pass


class IdOverflow(CanIdsError, ValueError):
    def __init__(self, can_id: int, id_bits: int):
        super().__init__(f"CAN id 0x{can_id:X} does not fit a {id_bits}-bit identifier")
        self.can_id = can_id
        self.id_bits = id_bits


class ParseError(CanIdsError, ValueError):
    def __init__(self, row: int, reason: str):
        super().__init__(f"row {row}: {reason}")
        self.row = row
        self.reason = reason


class ModelFormatError(CanIdsError, ValueError):
    pass


class ShapeMismatch(CanIdsError, ValueError):
    pass


class DegenerateBatch(CanIdsError, ValueError):
    pass


class NonFiniteValue(CanIdsError, ArithmeticError):
    pass


class SingleClassTrainingSet(CanIdsError, ValueError):
    pass


class MissingRunningStats(CanIdsError):
    pass


class EmptyCalibrationSet(CanIdsError, ValueError):
    pass


class EmptyMatrix(CanIdsError, ValueError):
    pass


class InsufficientSamples(CanIdsError, ValueError):
    pass


class StreamError(CanIdsError):
    pass


class WorkerPanic(StreamError):
    """The inference worker raised while a window was in flight."""

    def __init__(self, index: int, cause: BaseException):
        super().__init__(f"inference worker failed on frame {index}: {cause}")
        self.index = index
        self.cause = cause
