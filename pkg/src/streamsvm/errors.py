"""Exception hierarchy shared across the package."""


class StreamSvmError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(StreamSvmError, ValueError):
    pass


class ShapeError(StreamSvmError, ValueError):
    pass


class DomainError(StreamSvmError, ValueError):
    pass


class NotFoundError(StreamSvmError, KeyError):
    pass


class InvariantError(StreamSvmError, RuntimeError):
    """Solver state is internally inconsistent."""


class DegeneracyError(StreamSvmError, ArithmeticError):
    """A bordered kernel matrix update hit a (near) singular pivot."""


class NonConvergenceError(StreamSvmError, RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DataError(StreamSvmError, ValueError):
    """Malformed or unusable input data."""


class ParseError(DataError):
    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class EmptyDatasetError(DataError):
    pass


class ConfigurationError(StreamSvmError, ValueError):
    pass


class UndefinedMetricError(StreamSvmError, ValueError):
    pass


class CheckpointError(StreamSvmError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass
