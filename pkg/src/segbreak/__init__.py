"""Breakpoint detection and sparse coefficient estimation for
multi-phase linear regression.

The estimator partitions the sample into contiguous segments and fits a
penalized regression within each; the partition minimizing the summed
penalized costs is found by dynamic programming.  A complexity criterion
chooses the number of breakpoints when it is unknown.
"""

from .errors import (
    AdaptiveUnavailableError,
    DegenerateInputError,
    DimensionMismatchError,
    EmptySegmentError,
    InfeasiblePartitionError,
    NoConvergenceError,
    NonFiniteValueError,
    SegbreakError,
    SingularActiveGramError,
    SingularGramError,
    SingularSystemError,
    TooManyFailuresError,
    TruthUnavailableError,
    UnderdeterminedError,
    WindowTooSmallWarning,
)
from .model import (
    COMPLEXITY_K_ONLY,
    COMPLEXITY_K_TIMES_P,
    FAMILY_ADAPTIVE,
    FAMILY_LASSO_TYPE,
    ChangePointFit,
    CriterionConfig,
    Dataset,
    PenaltyConfig,
    SegmentFit,
    SegmentRange,
    TruthInfo,
    breakpoints_from_ranges,
    center_columns,
    effective_min_seg_len,
    segment_ranges,
    validate_dataset,
)
from .segmentation import (
    WriteOnceCache,
    adaptive_weights,
    build_cost_table,
    lambda_for_segment,
    optimal_breakpoints,
    pair_costs,
    refit_breakpoints_two_stage,
    segment_cost,
)
from .selection import (
    SelectionResult,
    SelectionRow,
    StandardErrorReport,
    active_set_standard_errors,
    criterion_value,
    select_k,
)
from .simulation import (
    REGIME_COEFFICIENTS,
    TABLE_LAYOUTS,
    ErrorSpec,
    LimitLawSample,
    LsBaselineMetrics,
    MonteCarloReport,
    ScenarioSpec,
    default_covariate_means,
    generate_scenario,
    one_break_spec,
    replication_dataset,
    run_monte_carlo,
    sample_limit_law,
    table_preset,
    write_dataset,
)
from .solvers import (
    KktReport,
    bridge,
    kkt_check,
    lasso_cd,
    ols,
    penalized_objective,
    penalty_sum,
    ridge,
    soft_threshold,
    wrap_coefficients,
)

__version__ = "0.1.0"

__all__ = [
    "AdaptiveUnavailableError",
    "COMPLEXITY_K_ONLY",
    "COMPLEXITY_K_TIMES_P",
    "ChangePointFit",
    "CriterionConfig",
    "Dataset",
    "DegenerateInputError",
    "DimensionMismatchError",
    "EmptySegmentError",
    "ErrorSpec",
    "FAMILY_ADAPTIVE",
    "FAMILY_LASSO_TYPE",
    "InfeasiblePartitionError",
    "KktReport",
    "LimitLawSample",
    "LsBaselineMetrics",
    "MonteCarloReport",
    "NoConvergenceError",
    "NonFiniteValueError",
    "PenaltyConfig",
    "REGIME_COEFFICIENTS",
    "ScenarioSpec",
    "SegbreakError",
    "SegmentFit",
    "SegmentRange",
    "SelectionResult",
    "SelectionRow",
    "SingularActiveGramError",
    "SingularGramError",
    "SingularSystemError",
    "StandardErrorReport",
    "TABLE_LAYOUTS",
    "TooManyFailuresError",
    "TruthInfo",
    "TruthUnavailableError",
    "UnderdeterminedError",
    "WindowTooSmallWarning",
    "WriteOnceCache",
    "active_set_standard_errors",
    "adaptive_weights",
    "breakpoints_from_ranges",
    "bridge",
    "build_cost_table",
    "center_columns",
    "criterion_value",
    "default_covariate_means",
    "effective_min_seg_len",
    "generate_scenario",
    "kkt_check",
    "lambda_for_segment",
    "lasso_cd",
    "ols",
    "one_break_spec",
    "optimal_breakpoints",
    "pair_costs",
    "penalized_objective",
    "penalty_sum",
    "refit_breakpoints_two_stage",
    "replication_dataset",
    "ridge",
    "run_monte_carlo",
    "sample_limit_law",
    "segment_cost",
    "segment_ranges",
    "select_k",
    "soft_threshold",
    "table_preset",
    "validate_dataset",
    "wrap_coefficients",
    "write_dataset",
]
