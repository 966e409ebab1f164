# errors.py


class BnnError(Exception):
    """Base class for everything this toolkit raises on purpose."""


class InvalidInputError(BnnError, ValueError):
    pass


class DimensionError(BnnError, ValueError):
    pass


class ModelFormatError(BnnError, ValueError):
    pass


class CnfFormatError(BnnError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class IdxFormatError(BnnError, ValueError):
    def __init__(self, message: str, offset: int, path: str = ""):
        where = f"{path} @ offset {offset}" if path else f"offset {offset}"
        super().__init__(f"{message} ({where})")
        self.offset = offset
        self.path = path


class BudgetError(BnnError, ValueError):
    pass


class UsageError(BnnError, ValueError):
    pass


class TrainingError(BnnError, RuntimeError):
    def __init__(self, message: str, epoch: int):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


class ProtocolError(BnnError, RuntimeError):
    pass


class EncodingError(BnnError, RuntimeError):
    """The CNF disagrees with itself, e.g. an inference query came back Unsat."""


class ManifestMismatchError(BnnError, ValueError):
    pass
