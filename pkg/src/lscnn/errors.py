"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class LscnnError(Exception):
    exit_code = 1


class ConfigError(LscnnError):
    exit_code = 2


class ShapeError(LscnnError, ValueError):
    exit_code = 2


class InvalidParameterError(LscnnError, ValueError):
    exit_code = 2


class DataError(LscnnError):
    exit_code = 3


class NumericError(LscnnError, FloatingPointError):
    exit_code = 4


class FormatError(LscnnError):
    exit_code = 5


class StateError(LscnnError, RuntimeError):
    exit_code = 1


class CompositionError(LscnnError, ValueError):
    exit_code = 2


class UndefinedMetricError(LscnnError, ValueError):
    exit_code = 3
