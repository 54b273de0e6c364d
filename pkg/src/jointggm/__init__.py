"""Joint estimation of Gaussian graphical models across related conditions.

The estimator screens correlations, scores each candidate edge with a
reduced-conditioning partial correlation turned into an approximately
standard-normal statistic, shares strength across conditions through a
Bayesian model over per-condition edge statuses, and calls edges with a
pooled multiple test.
"""

from .data import (
    ConditionBlock,
    ConditionedDataset,
    load_dataset,
    load_manifest,
    load_table,
    load_two_group_manifest,
    standardize,
    write_table,
)
from .detection import (
    GraphEstimate,
    MultipleTestResult,
    by_adjust,
    change_report,
    detect_edges,
    local_fdr,
    multiple_test,
    normal_pvalues,
    write_graph_csv,
    write_hub_ranking,
)
from .edge_scores import (
    EdgeScoreMatrix,
    adjusted_edge_zscore,
    compute_edge_scores,
    edge_zscore,
    pair_from_index,
    pair_index,
    partial_correlation,
    separator,
)
from .errors import AnalysisError, EstimationError, ParseError, ValidationError
from .evaluation import (
    PowerLawFit,
    PrCurve,
    auprc,
    auprc_summary,
    confusion,
    confusion_by_condition,
    load_score_csv,
    load_truth_masks,
    powerlaw_fit,
    pr_curve,
    pr_curve_alpha,
    write_pr_csv,
    write_pr_svg,
)
from .integration import (
    EdgePosterior,
    Hyperparams,
    IntegratedScores,
    bayes_average,
    enumerate_posterior,
    gibbs_posterior,
    integrate_matrix,
    log_marginal_config,
    resolve_engine,
    stouffer_combine,
)
from .pipeline import FitConfig, FitResult, fit, run_fit, two_step_fit
from .screening import (
    CorrelationSummary,
    ReducedNeighborhoods,
    ScreeningResult,
    correlation_pvalues,
    empirical_correlations,
    neighborhood_cap,
    reduce_neighborhoods,
    screen_edges,
)
from .simulate import (
    Replicate,
    ar2_precision,
    edge_mask,
    make_family,
    pd_repair,
    perturb,
    sample_mvn,
    simulate_replicate,
    structured_precision,
    true_partial_correlations,
    write_replicate,
)
from .version import __version__

__all__ = [
    "AnalysisError",
    "ConditionBlock",
    "ConditionedDataset",
    "CorrelationSummary",
    "EdgePosterior",
    "EdgeScoreMatrix",
    "EstimationError",
    "FitConfig",
    "FitResult",
    "GraphEstimate",
    "Hyperparams",
    "IntegratedScores",
    "MultipleTestResult",
    "ParseError",
    "PowerLawFit",
    "PrCurve",
    "ReducedNeighborhoods",
    "Replicate",
    "ScreeningResult",
    "ValidationError",
    "adjusted_edge_zscore",
    "ar2_precision",
    "auprc",
    "auprc_summary",
    "bayes_average",
    "by_adjust",
    "change_report",
    "compute_edge_scores",
    "confusion",
    "confusion_by_condition",
    "correlation_pvalues",
    "detect_edges",
    "edge_mask",
    "edge_zscore",
    "empirical_correlations",
    "enumerate_posterior",
    "fit",
    "gibbs_posterior",
    "integrate_matrix",
    "load_dataset",
    "load_manifest",
    "load_score_csv",
    "load_table",
    "load_truth_masks",
    "load_two_group_manifest",
    "local_fdr",
    "log_marginal_config",
    "make_family",
    "multiple_test",
    "neighborhood_cap",
    "normal_pvalues",
    "pair_from_index",
    "pair_index",
    "partial_correlation",
    "pd_repair",
    "perturb",
    "powerlaw_fit",
    "pr_curve",
    "pr_curve_alpha",
    "reduce_neighborhoods",
    "resolve_engine",
    "run_fit",
    "sample_mvn",
    "screen_edges",
    "separator",
    "simulate_replicate",
    "standardize",
    "stouffer_combine",
    "structured_precision",
    "true_partial_correlations",
    "two_step_fit",
    "write_graph_csv",
    "write_hub_ranking",
    "write_pr_csv",
    "write_pr_svg",
    "write_replicate",
    "write_table",
    "__version__",
]
