"""Exception taxonomy shared by every module.

The CLI maps these onto exit codes: ConfigError -> 1 (usage),
DataError / FormatError / WeightLoadError / ShapeError -> 2 (data or
format), NumericError -> 3 (numeric failure).
"""


class BananetError(Exception):
    """Base class for all package errors."""


class ShapeError(BananetError, ValueError):
    """Tensor dimensions do not compose."""


class NumericError(BananetError, ArithmeticError):
    """An operation produced NaN/Inf or an otherwise invalid number."""


class ConfigError(BananetError, ValueError):
    """Invalid option, hyperparameter or pipeline configuration."""


class StateError(BananetError, RuntimeError):
    """An operation was called with missing or stale cached state."""


class DataError(BananetError, ValueError):
    """Dataset ingestion or image decoding failure."""


class FormatError(BananetError, ValueError):
    """Malformed NTW container (bad magic, dtype, truncation)."""


class WeightLoadError(BananetError, ValueError):
    """NTW file does not bind cleanly onto a model's parameters."""
