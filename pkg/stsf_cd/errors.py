# stsf_cd/errors.py


class StsfError(Exception):
    """Base error with detailed error records"""
    def __init__(self, message, errors=None):
        super().__init__(message)
        self.errors = errors or []


class ConfigValidationError(StsfError):
    """Run configuration failed coercion, schema or plugin validation"""


class InvalidArgumentError(StsfError, ValueError):
    pass


class ConfigurationError(StsfError, ValueError):
    """Inconsistent architecture or variant settings"""


class ShapeError(StsfError, ValueError):
    pass


class ChangeConflictError(StsfError, ValueError):
    """Two change events claim one cell with different labels"""


class InvalidLabelError(StsfError, ValueError):
    pass


class UndefinedMetricError(StsfError, ArithmeticError):
    pass


class IncompatibleCheckpointError(StsfError):
    pass


class TrainingDivergedError(StsfError, ArithmeticError):
    def __init__(self, message, errors=None, dump_path=None):
        super().__init__(message, errors)
        self.dump_path = dump_path


class ArtifactIOError(StsfError, OSError):
    """Missing or unwritable dataset, checkpoint, sample or output path"""
