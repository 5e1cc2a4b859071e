"""Exception hierarchy shared by every module in the package."""


class CIVAError(Exception):
    """Base class for all package errors."""


class DimensionError(CIVAError, ValueError):
    pass


class NotCenteredError(CIVAError, ValueError):
    pass


class DegenerateDemixingError(CIVAError, ArithmeticError):
    """A demixing matrix (or a row-deleted submatrix) is singular."""


class IllConditionedModelError(CIVAError, ArithmeticError):
    """An SCV covariance stays singular even after diagonal loading."""


class NumericalFailureError(CIVAError, ArithmeticError):
    pass


class DegenerateSignalError(CIVAError, ValueError):
    """A signal has (numerically) zero variance, so correlation is undefined."""


class UndefinedMetricError(CIVAError, ValueError):
    pass


class InfeasibleCorrelationError(CIVAError, ValueError):
    pass


class ConfigError(CIVAError, ValueError):
    pass
