"""Adaptive-sampling stochastic optimization for constrained stochastic
programs: projected gradient descent and an SQP variant whose per-iteration
sample sizes are chosen a posteriori by variance tests, for expectation and
smoothed-CVaR objectives."""

__version__ = "0.1.0"

from .algorithms import (
    EqualityConstraint,
    OptimizerConfig,
    OptimizerState,
    RunResult,
    run_cvar_extended,
    run_nested_quantile,
    run_spgd_adaptive,
    run_sqp_adaptive,
    spgd_step,
    sqp_direction,
)
from .geometry import (
    AffineLinearization,
    Box,
    Halfspace,
    Hyperplane,
    Intersection,
    NonNegativeOrthant,
    ProductWithFree,
    ProjectionError,
    ProjectionResult,
    UnitSimplex,
    feasibility_residual,
    full_space,
    project,
    project_affine_linearization,
    project_simplex,
)
from .model import (
    GradientStats,
    SampleSet,
    StochasticProblem,
    draw_samples,
    sample_gradient,
    sample_objective,
)
from .problems import (
    BasicExample,
    PortfolioProblem,
    basic_optimum,
    make_basic_example,
    make_portfolio,
)
from .records import RunRecord, compare_runs, read_csv, write_csv
from .risk import (
    ExtendedProblem,
    RiskSpec,
    cvar_empirical,
    extend_problem,
    quantile_solve,
    smooth_plus,
    smooth_plus_deriv,
    smoothed_cvar,
    var_empirical,
)
from .sizing import (
    DiagnosticEstimate,
    DiagnosticReport,
    StationaryGradientError,
    TestConfig,
    TestOutcome,
    condition_diagnostic,
    norm_test,
    sqp_norm_test,
)
