"""Estimation of event rates and outcome models from records observed only when reported.

The package combines a reporting-propensity model fitted on weighted survey
data with inverse-propensity-corrected estimating equations on the reported
records: population totals and rates, a two-step logistic outcome model with
first-stage-aware sandwich covariance, a GEE variant for clustered records,
model diagnostics, and a simulation harness that checks the asymptotics
empirically.
"""

from .design_glm import (
    DesignedSurvey,
    FitConfig,
    PiModel,
    design_covariance,
    fit_weighted_logit,
    predict_pi,
)
from .reweight import (
    RateEstimate,
    ReportedOffenses,
    estimate_population_total,
    estimate_rates,
    grouped_rates,
    ht_population_mean,
)
from .twostep import (
    ArrestFit,
    arrest_sandwich_covariance,
    compare_unadjusted,
    fit_arrest_model,
)
from .gee import (
    Clusters,
    GEEFit,
    build_clusters,
    estimate_exchangeable_alpha,
    exchangeable_inverse,
    fit_arrest_gee,
)
from .diagnostics import (
    FocalSlopeConfig,
    FocalSlopeReport,
    focal_slope,
    positivity_report,
    weighted_auc,
    weighted_calibration,
)
from . import exceptions, simulate

__all__ = [
    "DesignedSurvey",
    "FitConfig",
    "PiModel",
    "design_covariance",
    "fit_weighted_logit",
    "predict_pi",
    "RateEstimate",
    "ReportedOffenses",
    "estimate_population_total",
    "estimate_rates",
    "grouped_rates",
    "ht_population_mean",
    "ArrestFit",
    "arrest_sandwich_covariance",
    "compare_unadjusted",
    "fit_arrest_model",
    "Clusters",
    "GEEFit",
    "build_clusters",
    "estimate_exchangeable_alpha",
    "exchangeable_inverse",
    "fit_arrest_gee",
    "FocalSlopeConfig",
    "FocalSlopeReport",
    "focal_slope",
    "positivity_report",
    "weighted_auc",
    "weighted_calibration",
    "exceptions",
    "simulate",
]
