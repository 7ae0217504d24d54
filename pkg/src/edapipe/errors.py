"""Exception taxonomy shared by the library and the CLI exit codes."""


class EdapipeError(Exception):
    """Base class for all edapipe errors."""


class ConfigError(EdapipeError, ValueError):
    """Invalid configuration or parameters (CLI exit code 2)."""


class DataError(EdapipeError, RuntimeError):
    """Invalid, inconsistent, or missing data (CLI exit code 3)."""


class GoldenMismatch(EdapipeError):
    """A golden reference check failed (CLI exit code 4)."""


class StageFailure(EdapipeError):
    """A pipeline stage failed (CLI exit code 5)."""


class TrainingDiverged(EdapipeError, ArithmeticError):
    """Model training produced a non-finite loss."""

    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")
