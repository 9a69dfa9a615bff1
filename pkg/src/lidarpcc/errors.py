"""Exception hierarchy. CLI exit codes are attached to the classes."""


class LpcError(Exception):
    exit_code = 1


class InvalidInputError(LpcError, ValueError):
    exit_code = 2


class DegeneratePointError(InvalidInputError):
    pass


class EstimationError(LpcError):
    exit_code = 2


class FormatError(LpcError):
    exit_code = 3


class ConfigurationError(LpcError):
    exit_code = 4


class CorruptionError(LpcError):
    exit_code = 5


class TruncationError(CorruptionError):
    pass


class PredictorError(LpcError):
    exit_code = 6


class DivergenceError(LpcError):
    exit_code = 6


class InfeasibleError(LpcError):
    exit_code = 7
