"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class ShipError(Exception):
    exit_code = 1


class ConfigError(ShipError, ValueError):
    exit_code = 2


class UsageError(ShipError):
    exit_code = 2


class DataValidationError(ShipError, ValueError):
    exit_code = 3


class ParseError(DataValidationError):
    pass


class NumericError(ShipError, ArithmeticError):
    exit_code = 4


class DimensionError(ShipError, ValueError):
    exit_code = 4


class VocabularyError(ShipError, IndexError):
    exit_code = 3


class LabelError(ShipError, ValueError):
    exit_code = 3


class UndefinedMetricError(ShipError, ValueError):
    exit_code = 4


class RecordLookupError(ShipError, KeyError):
    exit_code = 2

    def __str__(self):
        return str(self.args[0]) if self.args else ""
