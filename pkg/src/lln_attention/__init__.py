"""LLN (linear log-normal) attention next to softmax attention, with the
statistics used to compare them: temperature, entropy, spectral gap,
log-normal fits and moment matching."""

__version__ = "0.1.0"

from .attention import (
    METHODS,
    AttnConfig,
    LLNParams,
    attention,
    attention_grad,
    attention_weights,
    block_diag_attention,
    check_attention_matrix,
    lln_attention_grad,
    lln_attention_linear,
    lln_attention_materialized,
    lln_diag_attention,
    lln_feature_map,
    softmax_attention,
    softmax_attention_grad,
)
from .errors import (
    AttentionError,
    CalibrationInfeasibleError,
    ConvergenceError,
    DegenerateError,
    DomainError,
    ShapeError,
)
from .matching import MatchConfig, MatchResult, fit_broad_constants, solve_alpha_beta
from .stats import (
    StatsReport,
    cross_covariance,
    deflation_centering_check,
    empirical_temperature,
    fenton_sum_variance,
    lln_temperature,
    lognormal_fit,
    lognormal_predict,
    matrix_entropy,
    spectral_gap,
    stats_report,
    theoretical_temperature,
)
