"""Partially pooled synthetic control estimation for staggered adoption panels."""

from .balance import (BalanceReport, Normalizers, WeightMatrix, balance_report,
                      normalizers, q_covariates, q_pool, q_sep, q_unit)
from .effects import (EffectEstimates, estimate_effects, placebo_in_time,
                      trim_and_refit)
from .errors import (AllTreatedError, BothZeroError, EventOutOfRangeError,
                     InconsistentTreatmentError, InsufficientDataError,
                     InsufficientPrePeriodsError, NoCovariatesError,
                     NoDonorsError, RaggedPanelError, RegimeUnsupportedError,
                     StagsynthError)
from .estimator import PartiallyPooledSCM
from .inference import (InferenceResult, jackknife_se, unit_contributions,
                        wild_bootstrap_ci)
from .panel import (NEVER, DonorSets, EventConfig, PanelData, default_config,
                    demean_residuals, donor_sets, load_panel, write_panel)
from .simulate import (DgpSpec, EstimatorSpec, McReport, SelectionSpec,
                       assign_treatment, calibrate, generate, generate_draw,
                       run_monte_carlo)
from .solver import (CohortView, DualSolution, FitResult, SolveOptions,
                     cohort_transform, dual_check, fit_panel,
                     intercept_closed_form, project_simplex, solve,
                     solve_separate, uniform_fit)
from .tuning import (BoundInputs, FrontierPoint, bound_ar, bound_lfm,
                     nu_heuristic, oracle_nu_ar, tangent_nu, trace_frontier)

__version__ = "0.1.0"

__all__ = [
    "AllTreatedError", "BalanceReport", "BothZeroError", "BoundInputs",
    "CohortView", "DgpSpec", "DonorSets", "DualSolution", "EffectEstimates",
    "EstimatorSpec", "EventConfig", "EventOutOfRangeError", "FitResult",
    "FrontierPoint", "InconsistentTreatmentError", "InferenceResult",
    "InsufficientDataError", "InsufficientPrePeriodsError", "McReport",
    "NEVER", "NoCovariatesError", "NoDonorsError", "Normalizers", "PanelData",
    "PartiallyPooledSCM", "RaggedPanelError", "RegimeUnsupportedError",
    "SelectionSpec", "SolveOptions", "StagsynthError", "WeightMatrix",
    "assign_treatment", "balance_report", "bound_ar", "bound_lfm",
    "calibrate", "cohort_transform", "default_config", "demean_residuals",
    "donor_sets", "dual_check", "estimate_effects", "fit_panel", "generate",
    "generate_draw", "intercept_closed_form", "jackknife_se", "load_panel",
    "normalizers", "nu_heuristic", "oracle_nu_ar", "placebo_in_time",
    "project_simplex", "q_covariates", "q_pool", "q_sep", "q_unit",
    "run_monte_carlo", "solve", "solve_separate", "tangent_nu",
    "trace_frontier", "trim_and_refit", "uniform_fit", "unit_contributions",
    "wild_bootstrap_ci", "write_panel",
]
