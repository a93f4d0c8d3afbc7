"""Copula-based fusion of correlated binary sensor decisions."""

__version__ = "0.1.0"

from .copulas import (BivariateCopula, CopulaDomainError, CopulaFamily, CopulaFitError, FitResult,
                      INDEPENDENCE, fit_mle, h_func, h_inverse, select_best, tau_inversion)
from .fusion import (DecisionPMF, FusionError, FusionModel, FusionWeights, asymptotic_stats,
                     chair_varshney, eval_statistic, fuse, np_operating_point, train_fusion,
                     weights_from_pmf)
from .marginals import KDEMarginal, ecdf_transform, kde_fit, kendall_tau
from .rvine import (FittedRVine, SubsetCopulaSet, build_subset_copula_set, gof_bootstrap,
                    select_structure, validate_array)
from .simulation import ScenarioConfig, load_config, run_roc

__all__ = [
    "BivariateCopula", "CopulaDomainError", "CopulaFamily", "CopulaFitError", "FitResult",
    "INDEPENDENCE", "fit_mle", "h_func", "h_inverse", "select_best", "tau_inversion",
    "DecisionPMF", "FusionError", "FusionModel", "FusionWeights", "asymptotic_stats",
    "chair_varshney", "eval_statistic", "fuse", "np_operating_point", "train_fusion",
    "weights_from_pmf", "KDEMarginal", "ecdf_transform", "kde_fit", "kendall_tau",
    "FittedRVine", "SubsetCopulaSet", "build_subset_copula_set", "gof_bootstrap",
    "select_structure", "validate_array", "ScenarioConfig", "load_config", "run_roc",
]
