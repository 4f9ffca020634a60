"""Numerical laboratory for homogenization of semilinear elliptic equations
with rapidly oscillating random potentials."""

from .errors import (
    ConfigurationError,
    DegenerateSamplesError,
    EllipticityError,
    EmbeddingError,
    GridMismatchError,
    HomoglabError,
    NonconvergenceError,
    SolverError,
    ValidationError,
)
from .grid import (
    Grid,
    GridFunction,
    build_grid,
    inner_product,
    l2_norm,
    laplacian_apply,
    linf_norm,
)
from .pde import (
    Nonlinearity,
    SolveReport,
    apply_linearized_inverse,
    bistable_cubic,
    energy,
    green_column,
    linear_reaction,
    smallest_eigenvalue,
    solve_homogenized,
    solve_semilinear,
)
from .randfield import (
    FieldSample,
    PotentialModel,
    build_long_range,
    build_short_range,
    empirical_correlation,
    empirical_fourth_moment,
    exact_sigma2,
    realization_seed,
    sample_gaussian_lattice,
    sample_potential,
)
from .fluctuation import (
    ExpansionTerms,
    VariancePrediction,
    corrector,
    expansion_terms,
    predicted_variance_long,
    predicted_variance_short,
)
from .mc import (
    Bands,
    FieldSpec,
    McSummary,
    ModelSpec,
    NonlinearitySpec,
    StudyConfig,
    fit_loglog_slope,
    normality_stats,
    run_distribution_study,
    run_scaling_study,
)

__version__ = "0.1.0"
