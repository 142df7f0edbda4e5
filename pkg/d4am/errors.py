"""Exception hierarchy and the CLI exit code each failure maps to."""

from typing import Any, Optional

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4
EXIT_TRAINING = 5


class D4AMError(Exception):
    """Base for every error raised by this package."""

    exit_code = EXIT_UNEXPECTED


class ConfigError(D4AMError, ValueError):
    exit_code = EXIT_CONFIG


class ShapeError(D4AMError, ValueError):
    exit_code = EXIT_CONFIG


class DataError(D4AMError, ValueError):
    exit_code = EXIT_CONFIG


class NumericalFailure(D4AMError, ArithmeticError):
    """Non-finite gradient or loss. `step` is the offending step index."""

    exit_code = EXIT_NUMERICAL

    def __init__(self, message: str, step: Optional[int] = None, report: Any = None):
        super().__init__(message)
        self.step = step
        self.report = report


class TrainingFailure(D4AMError, RuntimeError):
    """A frozen classifier did not reach its clean-accuracy floor."""

    exit_code = EXIT_TRAINING


class CheckpointError(D4AMError, OSError):
    exit_code = EXIT_IO


class RunError(D4AMError, RuntimeError):
    """Run aborted after training; `report` keeps everything recorded so far."""

    exit_code = EXIT_IO

    def __init__(self, message: str, report: Any = None):
        super().__init__(message)
        self.report = report
