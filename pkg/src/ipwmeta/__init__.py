"""Publication-bias-adjusted meta-analysis via inverse probability weighting,
with selection functions calibrated against clinical-trial-registry records
of unpublished studies."""

__version__ = "0.1.0"

from ipwmeta.model import (DatasetError, MetaDataset, StudyRecord,
                           TwoByTwoCounts, effect_from_counts, load_dataset,
                           save_dataset)
from ipwmeta.selection import SelectionModel, dprob_dbeta, prob, selection_statistics
from ipwmeta.estimation import (DlEstimates, EstimatingEquationSpec,
                                NoRootError, PointEstimates, dl_fit, fit,
                                heterogeneity, ipw_fixed_mean, ipw_mean,
                                ipw_tau2, solve_beta_1param, solve_beta_2param,
                                u_beta)
from ipwmeta.inference import (BootstrapResult, SandwichResult,
                               SingularJacobianError, parametric_bootstrap,
                               sandwich_covariance)
from ipwmeta.simulation import (GenerativeConfig, MethodSpec, ScenarioMetrics,
                                apply_selection, generate_population,
                                run_scenario)

__all__ = [
    "DatasetError", "MetaDataset", "StudyRecord", "TwoByTwoCounts",
    "effect_from_counts", "load_dataset", "save_dataset",
    "SelectionModel", "prob", "dprob_dbeta", "selection_statistics",
    "DlEstimates", "EstimatingEquationSpec", "NoRootError", "PointEstimates",
    "dl_fit", "fit", "heterogeneity", "ipw_fixed_mean", "ipw_mean", "ipw_tau2",
    "solve_beta_1param", "solve_beta_2param", "u_beta",
    "BootstrapResult", "SandwichResult", "SingularJacobianError",
    "parametric_bootstrap", "sandwich_covariance",
    "GenerativeConfig", "MethodSpec", "ScenarioMetrics", "apply_selection",
    "generate_population", "run_scenario",
]
