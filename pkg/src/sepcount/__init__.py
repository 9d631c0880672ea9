"""Separable semiparametric Poisson counting-process models for dyadic event panels."""

from .design import DesignMatrix, ModelSpec, SeparabilityConfig, attach_weights, build_design, random_effect_blocks
from .estimation import (
    EstimationError,
    FitResult,
    PenaltyConfig,
    RankDeficiencyError,
    coefficient_curve,
    extract_random_effects,
    fit,
    penalized_gradient,
    penalized_loglik,
    predict_intensities,
    predict_intensity,
)
from .gof import (
    SimulationSummary,
    average_in_count,
    count_distributions,
    gof_report,
    rootogram_frequencies,
    simulate_panel,
    weighted_clustering,
)
from .network import EventFormat, EventPanel, EventRecord, IngestionError, load_events, risk_set
from .selection import ModelComparison, compare_suite, conditional_aic, corrected_aic
from .splines import SplineBasisSpec, basis_matrix, penalty_matrix
from .statistics import STRUCTURAL_STATISTICS, CovariateTable, Term, load_covariates

__version__ = "0.1.0"
