"""Exception hierarchy shared by every sgode module."""


class SGODEError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(SGODEError, ValueError):
    pass


class ConfigError(SGODEError, ValueError):
    pass


class ParameterError(SGODEError, ValueError):
    pass


class DomainError(SGODEError, ValueError):
    pass


class ContractError(SGODEError, RuntimeError):
    pass


class NumericError(SGODEError, ArithmeticError):
    pass


class IntegrationError(SGODEError, RuntimeError):
    pass


class TrainingError(SGODEError, RuntimeError):
    pass


class ParseError(SGODEError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
