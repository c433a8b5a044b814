"""Semiparametric transformation survival models with prediction-based
transfer of knowledge from external source studies."""

from .em import EmWorkspace, FitConfig, FitResult, build_grid, e_step, fit, \
    update_beta, update_lambda
from .errors import DataError, MetricUndefinedError, NumericError, SingularRiskError
from .frailty import (FrailtyPosteriorCS, FrailtyPosteriorRC, QuadratureRule,
                      build_rule, expected_poisson_bar, posterior_mean_cs,
                      posterior_mean_rc)
from .metrics import (CensoringKM, ValidationSet, censoring_km, d_tau,
                      integrated_brier, l2_distance, rmst_error, uno_c_index)
from .model import (CovariatePath, PseudoSample, StepIntensity, Subject,
                    TargetModel, TransformationSpec, cumulative_intensity,
                    log_likelihood, penalty_psi, survival, survival_grid,
                    transform_G)
from .simulate import (GeneratedStudy, ScenarioSpec, gen_source, gen_target,
                       run_replicates, summarize)
from .sources import (PooledPredictor, SourcePredictor, build_pseudo_samples,
                      evaluate_pooled, evaluate_source, pool, pool_weights)
from .tuning import TuneGrid, aic_select_r, cv_select_xi

__version__ = "0.1.0"

__all__ = [
    "CovariatePath", "Subject", "StepIntensity", "TransformationSpec",
    "TargetModel", "PseudoSample", "transform_G", "cumulative_intensity",
    "survival", "survival_grid", "log_likelihood", "penalty_psi",
    "QuadratureRule", "build_rule", "FrailtyPosteriorRC", "FrailtyPosteriorCS",
    "posterior_mean_rc", "posterior_mean_cs", "expected_poisson_bar",
    "FitConfig", "EmWorkspace", "FitResult", "build_grid", "e_step",
    "update_lambda", "update_beta", "fit",
    "SourcePredictor", "PooledPredictor", "pool_weights", "pool",
    "evaluate_source", "evaluate_pooled", "build_pseudo_samples",
    "TuneGrid", "cv_select_xi", "aic_select_r",
    "CensoringKM", "ValidationSet", "censoring_km", "l2_distance", "d_tau",
    "uno_c_index", "integrated_brier", "rmst_error",
    "ScenarioSpec", "GeneratedStudy", "gen_target", "gen_source",
    "run_replicates", "summarize",
    "DataError", "NumericError", "SingularRiskError", "MetricUndefinedError",
]
