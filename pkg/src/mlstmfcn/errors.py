"""Exception types shared across the package."""


class MLSTMFCNError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(MLSTMFCNError, ValueError):
    """Shapes of operands are inconsistent."""


class DomainError(MLSTMFCNError, ValueError):
    """An input lies outside the mathematical domain of an operation."""


class ConfigurationError(MLSTMFCNError, ValueError):
    """A hyperparameter or configuration value is invalid."""


class ContractError(MLSTMFCNError, ValueError):
    """A documented precondition of an API call was violated."""


class NumericError(MLSTMFCNError, ArithmeticError):
    """A computation produced a non-finite value."""


class ParseError(MLSTMFCNError, ValueError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
