"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ContractError(ValueError):
    """A documented precondition was violated by the caller."""


class ConfigError(ValueError):
    """A run configuration is malformed or contains unknown keys."""


class NumericsError(ArithmeticError):
    """A computation produced NaN or Inf where finite values are required."""


class UnsupportedAnalysisError(ValueError):
    """The requested analysis does not apply to the given run (e.g. expert
    usage on an MLP-trunk run)."""
