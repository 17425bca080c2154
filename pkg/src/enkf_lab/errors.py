"""Exception hierarchy for enkf_lab."""


class EnkfLabError(Exception):
    """Base class for all library errors."""


class InvalidCovarianceError(EnkfLabError, ValueError):
    """A covariance matrix is not symmetric positive (semi-)definite."""


class DomainError(EnkfLabError, ValueError):
    """A scalar parameter lies outside its admissible range."""


class IncompatibleGridsError(EnkfLabError, ValueError):
    pass


class UnsupportedDimensionError(EnkfLabError, ValueError):
    pass


class GridCoverageError(EnkfLabError, RuntimeError):
    """Too much probability mass left the grid; enlarge the grid box."""


class LikelihoodUnderflowError(EnkfLabError, RuntimeError):
    """The observation is incompatible with the grid support."""


class SingularInnovationError(EnkfLabError, RuntimeError):
    pass


class DegenerateWeightsError(EnkfLabError, RuntimeError):
    pass


class InsufficientDataError(EnkfLabError, ValueError):
    pass


class ConfigurationError(EnkfLabError, ValueError):
    pass
