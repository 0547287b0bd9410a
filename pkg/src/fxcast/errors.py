"""Exception hierarchy shared by every fxcast module."""


class FxcastError(Exception):
    """Base class for all library errors."""


class DimensionError(FxcastError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(FxcastError, ValueError):
    """A documented precondition was violated by the caller."""


class ParameterError(FxcastError, ValueError):
    """A numeric or structural parameter is out of range."""


class ConfigError(ParameterError):
    """A model or run configuration is invalid."""


class SchemaError(FxcastError, ValueError):
    """Column names do not match the declared schema."""


class DataError(FxcastError, ValueError):
    """Input data is malformed or too short for the requested operation."""


class NumericalError(FxcastError, ArithmeticError):
    """A linear system could not be solved reliably."""


class AttributionError(FxcastError, ValueError):
    """An attribution request cannot be satisfied for the given model/layer."""


class CheckpointError(FxcastError, ValueError):
    """A checkpoint file is corrupt or does not match the requested config."""
