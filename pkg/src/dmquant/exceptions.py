"""Exception hierarchy.

Each top-level class carries the process exit code the CLI maps it to:
1 validation, 2 data, 3 numerical failure.
"""


class DmquantError(Exception):
    exit_code = 1


class ValidationError(DmquantError, ValueError):
    exit_code = 1


class ParameterError(ValidationError):
    pass


class ContractError(ValidationError):
    """Feature schema at predict time does not match the fitted schema."""


class PlanValidationError(ValidationError):
    pass


class DependencyError(ValidationError):
    """A pipeline stage was run before the stage that produces its inputs."""


class ConfigError(ValidationError):
    pass


class DataError(DmquantError):
    exit_code = 2


class ParseError(DataError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        locus = ""
        if path is not None:
            locus = f"{path}"
            if line is not None:
                locus += f":{line}"
            locus += ": "
        super().__init__(locus + message)


class NoInputError(DataError):
    pass


class InsufficientAnchorsError(DataError):
    pass


class MonotonicityError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class SignalQualityError(DataError):
    pass


class NumericalError(DmquantError, ArithmeticError):
    exit_code = 3


class UndefinedMetricError(NumericalError):
    pass


class DivergenceError(NumericalError):
    pass
