"""Exception types shared across the toolkit."""


class TextSliderError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(TextSliderError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(TextSliderError, ValueError):
    """A precondition of an operation was violated."""


class ConfigurationError(TextSliderError, ValueError):
    """Inconsistent configuration, e.g. a slider trained for another encoder."""


class ContainerError(TextSliderError, ValueError):
    """A weight container file is malformed or truncated."""


class NumericalError(TextSliderError, ArithmeticError):
    """Training produced a non-finite value."""


class DegenerateDirectionError(ContractError):
    """A concept direction has zero length."""
