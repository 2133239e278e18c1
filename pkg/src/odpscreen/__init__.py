"""Screening for treatment-modifying biomarkers in two-arm studies.

Fits one weighted interaction model per candidate biomarker, pools the
fits through a semiparametric mixture of a point-mass null and a free
discrete alternative, ranks biomarkers by their optimal-discovery
statistic, and selects at a target false discovery rate.  Includes
Wald and arm-contrast competitors with q-values, and a Monte-Carlo
benchmark harness.
"""

from .data import (BinaryOutcome, ColumnSchema, Dataset, DatasetError,
                   Diagnostic, SurvivalOutcome, load_dataset, recode_treatment,
                   validate_dataset, write_dataset)
from .fitting import (BiomarkerFit, ProfileTable, fit_all, fit_biomarkers,
                      fit_single, newton_minimize, profile_all, profile_normal,
                      profile_plugin, write_fit_sidecar)
from .loss import (LOSS_KINDS, LinearPredictorSpec, LossError,
                   WeightedObjective, check_loss_compat, default_loss,
                   weighted_objective)
from .pipeline import (DEFAULT_FDR_LEVELS, ScreenOptions, ScreenRun,
                       run_qvalue, run_screen)
from .prior import (EMTrace, KnotGrid, MixturePrior, default_prior, em_fit,
                    marginal_loglik, select_knots, write_em_trace, write_prior)
from .propensity import (ConstantPropensity, LassoPropensity, PropensitySpec,
                         SuppliedPropensity, WeightSet, compute_weights,
                         estimate_propensity_lasso, resolve_propensity)
from .screening import (ScreeningResult, SelectionSet, competitor_stats, ods,
                        posterior_nonnull, qvalues, screen_tables,
                        select_at_fdr, selection_column, write_report)
from .simulation import (BenchmarkResult, SimConfig, SimTruth,
                         generate_replicate, run_benchmark, write_benchmark,
                         write_truth)

__version__ = "0.1.0"

__all__ = [
    "BinaryOutcome",
    "ColumnSchema",
    "Dataset",
    "DatasetError",
    "Diagnostic",
    "SurvivalOutcome",
    "load_dataset",
    "recode_treatment",
    "validate_dataset",
    "write_dataset",
    "LOSS_KINDS",
    "LinearPredictorSpec",
    "LossError",
    "WeightedObjective",
    "check_loss_compat",
    "default_loss",
    "weighted_objective",
    "ConstantPropensity",
    "LassoPropensity",
    "PropensitySpec",
    "SuppliedPropensity",
    "WeightSet",
    "compute_weights",
    "estimate_propensity_lasso",
    "resolve_propensity",
    "BiomarkerFit",
    "ProfileTable",
    "fit_all",
    "fit_biomarkers",
    "fit_single",
    "newton_minimize",
    "profile_all",
    "profile_normal",
    "profile_plugin",
    "write_fit_sidecar",
    "EMTrace",
    "KnotGrid",
    "MixturePrior",
    "default_prior",
    "em_fit",
    "marginal_loglik",
    "select_knots",
    "write_em_trace",
    "write_prior",
    "ScreeningResult",
    "SelectionSet",
    "competitor_stats",
    "ods",
    "posterior_nonnull",
    "qvalues",
    "screen_tables",
    "select_at_fdr",
    "selection_column",
    "write_report",
    "BenchmarkResult",
    "SimConfig",
    "SimTruth",
    "generate_replicate",
    "run_benchmark",
    "write_benchmark",
    "write_truth",
    "DEFAULT_FDR_LEVELS",
    "ScreenOptions",
    "ScreenRun",
    "run_qvalue",
    "run_screen",
    "__version__",
]
