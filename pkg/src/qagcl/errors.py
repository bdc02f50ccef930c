"""Exception types raised across the package."""


class QAGCLError(Exception):
    """Base class for all package errors."""


class DatasetFormatError(QAGCLError, ValueError):
    """Raised when a raw dataset file cannot be parsed."""


class EmptyDatasetError(QAGCLError, ValueError):
    """Raised when filtering leaves no interactions."""


class ConfigError(QAGCLError, ValueError):
    """Raised for unknown keys, bad values or ill-posed configurations."""


class SamplingError(QAGCLError, RuntimeError):
    """Raised when a negative service cannot be drawn for a user."""


class TrainingDivergedError(QAGCLError, FloatingPointError):
    """Raised when the joint loss becomes non-finite."""

    def __init__(self, epoch: int, batch: int, components: dict):
        self.epoch = epoch
        self.batch = batch
        self.components = components
        parts = ", ".join(f"{k}={v!r}" for k, v in components.items())
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}: {parts}")


class EvaluationError(QAGCLError, ValueError):
    """Raised when no user can be evaluated."""


class CheckpointError(QAGCLError, ValueError):
    """Raised for malformed or mismatched checkpoints."""
