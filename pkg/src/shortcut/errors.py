"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(RuntimeError):
    """A precondition of an operation was violated by the caller."""


class DomainError(ValueError):
    """An argument lies outside the domain an operation accepts."""


class ConfigError(ValueError):
    """A configuration is invalid or inconsistent."""


class RequestError(ValueError):
    """A sampling request cannot be served by the model."""


class DegenerateDataError(ValueError):
    """Data cannot be normalized (e.g. a zero-variance dimension)."""


class CorruptionError(IOError):
    """A checkpoint file is malformed; ``offset`` points at the failing byte."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
