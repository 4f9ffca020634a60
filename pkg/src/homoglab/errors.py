"""Exception hierarchy shared by all homoglab modules."""


class HomoglabError(Exception):
    """Base class for all package errors."""


class ConfigurationError(HomoglabError):
    """Invalid parameters, config files, or precondition violations at setup time."""


class ValidationError(ConfigurationError):
    """A validated invariant failed (ellipticity margin, resolution rule, ...)."""


class GridMismatchError(HomoglabError):
    """Operands live on different grids."""


class EmbeddingError(HomoglabError):
    """Circulant embedding of a covariance produced an unusable spectrum."""


class SolverError(HomoglabError):
    """Base class for linear/nonlinear solver failures."""


class NonconvergenceError(SolverError):
    """Iteration budget exhausted before reaching tolerance."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class EllipticityError(SolverError):
    """The linear system turned out not to be positive definite."""


class DegenerateSamplesError(HomoglabError):
    """A statistic was requested for samples with no variability."""
