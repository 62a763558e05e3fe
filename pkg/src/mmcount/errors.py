"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class MMCountError(Exception):
    exit_code = 1
    kind = "error"


class ParameterError(MMCountError, ValueError):
    exit_code = 2
    kind = "parameter"


class ConfigError(MMCountError, ValueError):
    exit_code = 2
    kind = "config"


class FormatError(MMCountError):
    """Malformed or truncated file content."""

    exit_code = 3
    kind = "format"


class LoadError(MMCountError):
    """A referenced file is missing or unreadable."""

    exit_code = 3
    kind = "load"


class ParseError(MMCountError, ValueError):
    exit_code = 4
    kind = "parse"


class DimensionError(MMCountError, ValueError):
    exit_code = 4
    kind = "dimension"


class AnnotationError(MMCountError, ValueError):
    exit_code = 4
    kind = "annotation"


class DataError(MMCountError, ValueError):
    exit_code = 4
    kind = "data"


class InputError(MMCountError, ValueError):
    """A modality required by the requested input mode is missing."""

    exit_code = 4
    kind = "input"


class TrainingError(MMCountError, RuntimeError):
    """Non-finite loss or another unrecoverable training failure."""

    exit_code = 5
    kind = "training"
