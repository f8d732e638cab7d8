import click
from typing import Optional, Dict, Any, List


class BaseCustomException(Exception):
    """Base exception class for custom exceptions"""

    def __init__(
        self, message: str, error_code: str = "GENERIC_ERROR",
        details: Optional[Dict[str, Any]] = None
    ):
        self.message = message
        self.error_code = error_code
        self.details = details or {}
        super().__init__(self.message)


class ValidationError(BaseCustomException):
    """Raised when input values violate a documented precondition"""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message, "VALIDATION_ERROR", details)


class ConfigError(BaseCustomException):
    """Raised when a configuration cannot build a consistent model or run"""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message, "CONFIG_ERROR", details)


class ShapeError(BaseCustomException):
    """Raised when tensor shapes break a stride or channel contract"""

    def __init__(self, message: str, stage: Optional[str] = None, **details: Any):
        if stage is not None:
            details["stage"] = stage
        super().__init__(message, "SHAPE_ERROR", details)


class CheckpointError(BaseCustomException):
    """Raised when a weight file does not match the model it is loaded into"""

    def __init__(
        self, message: str = "Checkpoint does not match model",
        mismatched: Optional[List[str]] = None,
        missing: Optional[List[str]] = None,
        unexpected: Optional[List[str]] = None,
    ):
        super().__init__(message, "CHECKPOINT_ERROR", {
            "mismatched": mismatched or [],
            "missing": missing or [],
            "unexpected": unexpected or [],
        })


class DataError(BaseCustomException):
    """Raised when a dataset layout is incomplete or inconsistent"""

    def __init__(self, message: str, files: Optional[List[str]] = None):
        super().__init__(message, "DATA_ERROR", {"files": files or []})


class FileProcessingError(BaseCustomException):
    """Raised when an image or mask file cannot be read or written"""

    def __init__(self, message: str = "File processing failed"):
        super().__init__(message, "FILE_PROCESSING_ERROR")


class DivergenceError(BaseCustomException):
    """Raised when the training loss stops being finite"""

    def __init__(self, message: str = "Training diverged", iteration: int = -1):
        super().__init__(message, "DIVERGENCE_ERROR", {"iteration": iteration})


class GradCheckError(BaseCustomException):
    """Raised when a finite-difference suite exceeds its tolerance"""

    def __init__(self, message: str = "Gradient check failed", suite: str = ""):
        super().__init__(message, "GRADCHECK_ERROR", {"suite": suite})


class ExperimentExecutionError(BaseCustomException):
    """Raised when an experiment step fails for an untyped reason"""

    def __init__(self, message: str = "Experiment execution failed", experiment: str = ""):
        super().__init__(message, "EXPERIMENT_EXECUTION_ERROR", {"experiment": experiment})


# Exception exit code mapping
EXCEPTION_EXIT_CODES = {
    "VALIDATION_ERROR": 2,
    "CONFIG_ERROR": 2,
    "SHAPE_ERROR": 3,
    "CHECKPOINT_ERROR": 4,
    "DATA_ERROR": 5,
    "FILE_PROCESSING_ERROR": 5,
    "DIVERGENCE_ERROR": 6,
    "GRADCHECK_ERROR": 7,
    "EXPERIMENT_EXECUTION_ERROR": 1,
}


class CommandFailed(click.ClickException):
    """Click exception that carries the exit code of a custom exception"""

    def __init__(self, message: str, exit_code: int):
        super().__init__(message)
        self.exit_code = exit_code


def create_click_exception(exc: BaseCustomException) -> click.ClickException:
    """Convert custom exception to a CLI failure"""
    text = f"[{exc.error_code}] {exc.message}"
    if exc.details:
        text += f" {exc.details}"
    return CommandFailed(text, EXCEPTION_EXIT_CODES.get(exc.error_code, 1))
