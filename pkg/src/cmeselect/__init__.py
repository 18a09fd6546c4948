"""Bi-level selection of conditional main effects for Gaussian and logistic
regression, with adaptive composite penalties."""

from .design import (
    CmeDesign,
    ColumnId,
    apply_standardization,
    build_cme_matrix,
    destandardize_coefficients,
    standardize,
    transform_new,
)
from .errors import (
    CmeError,
    ConvergenceError,
    DegenerateError,
    DesignError,
    DimensionError,
    ScenarioError,
    StabilityError,
)
from .families import get_family
from .penalty import (
    GroupSlopes,
    PenaltyParams,
    exp_outer,
    mcp,
    mcp_derivative,
    selection_threshold,
    slope,
    threshold,
    weighted_group_norm,
)
from .simulate import (
    MetricReport,
    ScenarioSpec,
    build_scenario,
    evaluate,
    gen_equicorrelated_me,
    gen_response,
    run_replicates,
)
from .solver import (
    FitOptions,
    FitState,
    check_stability,
    coordinate_pass,
    fit_gaussian,
    fit_glm,
    objective,
    predict,
)
from .tuning import CvReport, TuningGrid, cv_loss, cv_tune, lambda_max_weighted
from .weights import (
    RidgePilot,
    compute_weights,
    fit_ridge_pilot,
    ridge_fit,
    stabilize_weights,
)

__version__ = "0.1.0"
