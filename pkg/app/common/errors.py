from typing import Any, Optional


class SpkvError(Exception):
    """Base class for every error raised by the package."""


class ShapeError(SpkvError, ValueError):
    pass


class ContractViolation(SpkvError):
    pass


class ConfigurationError(SpkvError, ValueError):
    pass


class InputError(SpkvError, ValueError):
    pass


class CapacityError(SpkvError):
    pass


class CheckpointFormatError(SpkvError):
    pass


class TrainingDivergedError(SpkvError):
    """Raised when the training loss stops being finite.

    `record` holds the diagnostic TrainRecord written for the failing step.
    """

    def __init__(self, message: str, record: Optional[Any] = None):
        super().__init__(message)
        self.record = record
