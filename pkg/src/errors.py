"""
Error hierarchy for the GRAD toolkit.

Each top-level class maps to a CLI exit code:
- UsageError   -> 1
- DataError    -> 2
- StageFailure -> 3
"""


class GradError(Exception):
    """Base class for toolkit errors"""
    exit_code = 2


class UsageError(GradError):
    """Bad command-line usage or configuration reference"""
    exit_code = 1


class DataError(GradError, ValueError):
    """Input data is malformed, out of range or otherwise unusable"""
    exit_code = 2


class StageFailure(GradError, RuntimeError):
    """An experiment stage raised; downstream stages were skipped"""
    exit_code = 3

    def __init__(self, stage: str, message: str):
        super().__init__(f"Stage '{stage}' failed: {message}")
        self.stage = stage
        self.message = message


class TraceFormatError(DataError):
    """Trace file header or layout does not match the column mapping"""


class InfeasiblePlanError(DataError):
    """Injection schedule cannot be realized for the requested length"""


class ZeroOffsetError(DataError):
    """An injection drew an offset too small to change the reading"""


class WarmupError(ValueError):
    """REMA step requested before the warm-up window is complete"""


class SchemaMismatchError(DataError):
    """Two models or a model and its frames disagree on the feature schema"""
