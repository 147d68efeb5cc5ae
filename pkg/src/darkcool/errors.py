"""Exception hierarchy shared by all modules."""


class DarkcoolError(Exception):
    """Base class for every error raised by the package."""


class InvalidArgument(DarkcoolError, ValueError):
    pass


class NonHermitianError(InvalidArgument):
    pass


class UnsupportedConfiguration(DarkcoolError):
    pass


class SolverFailure(DarkcoolError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class MultipleSteadyStates(SolverFailure):
    def __init__(self, dimension, message=None):
        msg = message or f"steady state is not unique: null space has dimension {dimension}"
        super().__init__(msg)
        self.dimension = dimension


class StiffnessFailure(SolverFailure):
    pass


class IntegrationFailure(SolverFailure):
    pass


class ValidationError(DarkcoolError, ValueError):
    pass


class FormatError(ValidationError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class MissingProfiles(DarkcoolError):
    pass


class UndefinedRate(DarkcoolError, ArithmeticError):
    pass


class InvalidData(DarkcoolError, ValueError):
    pass


class RangeOverflow(DarkcoolError, OverflowError):
    pass


class ConfigError(DarkcoolError):
    pass
