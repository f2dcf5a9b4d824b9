"""Monotone regression for bivariate (functional, Bayes risk) pairs."""

from biviso.audit import (
    CertificationReport,
    Dominance,
    MurphyCurves,
    SimultaneityReport,
    breakpoint_competitor,
    certify_simultaneous,
    check_simultaneous,
    dominance,
    envelope_competitor,
    murphy_curves,
)
from biviso.errors import (
    BivisoError,
    CycleError,
    DimensionMismatch,
    DomainError,
    EmptyInput,
    GridMismatch,
    NonConvergenceWarning,
    RangeError,
    TooLarge,
)
from biviso.experiments import (
    StudyConfig,
    StudyResult,
    gen_meanvar_data,
    gen_qes_data,
    run_iteration_study,
    run_simultaneity_study,
)
from biviso.functional import (
    EtaGrid,
    FunctionalSpec,
    WeightedSample,
    WeightFunction,
    elementary_score_1,
    elementary_score_2,
    eval_identification,
    functional_bounds,
    joint_loss,
    make_eta_grid,
    mean,
    quantile,
    weight_function,
)
from biviso.joint import (
    BivariateFit,
    ConvergenceConfig,
    PairKind,
    alternating_solve,
    canonical_pair,
    fit_g1_given_g2,
    fit_g2_given_g1,
    total_joint_loss,
)
from biviso.poset import (
    PosetFit,
    PosetSample,
    UpperSetFamily,
    enumerate_upper_sets,
    poset_alternating_solve,
    poset_canonical_pair,
    poset_check_simultaneous,
    poset_fit_g2_given_g1,
    poset_minimizing_sets,
    poset_minmax_fit,
)
from biviso.solver import (
    Bound,
    ChainSample,
    Direction,
    MinimizingIndexSet,
    MonotoneFit,
    antitonic_mean_fit,
    minimizing_indices,
    minmax_fit,
    pooled_mean_fit,
    restrict_fit,
    run_losses,
)

__version__ = "0.1.0"

__all__ = [
    "BivariateFit",
    "BivisoError",
    "Bound",
    "CertificationReport",
    "ChainSample",
    "ConvergenceConfig",
    "CycleError",
    "DimensionMismatch",
    "Direction",
    "DomainError",
    "Dominance",
    "EmptyInput",
    "EtaGrid",
    "FunctionalSpec",
    "GridMismatch",
    "MinimizingIndexSet",
    "MonotoneFit",
    "MurphyCurves",
    "NonConvergenceWarning",
    "PairKind",
    "PosetFit",
    "PosetSample",
    "RangeError",
    "SimultaneityReport",
    "StudyConfig",
    "StudyResult",
    "TooLarge",
    "UpperSetFamily",
    "WeightFunction",
    "WeightedSample",
    "alternating_solve",
    "antitonic_mean_fit",
    "breakpoint_competitor",
    "canonical_pair",
    "certify_simultaneous",
    "check_simultaneous",
    "dominance",
    "elementary_score_1",
    "elementary_score_2",
    "enumerate_upper_sets",
    "envelope_competitor",
    "eval_identification",
    "fit_g1_given_g2",
    "fit_g2_given_g1",
    "functional_bounds",
    "gen_meanvar_data",
    "gen_qes_data",
    "joint_loss",
    "make_eta_grid",
    "mean",
    "minimizing_indices",
    "minmax_fit",
    "murphy_curves",
    "pooled_mean_fit",
    "poset_alternating_solve",
    "poset_canonical_pair",
    "poset_check_simultaneous",
    "poset_fit_g2_given_g1",
    "poset_minimizing_sets",
    "poset_minmax_fit",
    "quantile",
    "restrict_fit",
    "run_iteration_study",
    "run_losses",
    "run_simultaneity_study",
    "total_joint_loss",
    "weight_function",
    "__version__",
]
