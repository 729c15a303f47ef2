"""Inverse-propensity estimators of the latent population total and event rates.

Given reported records and their reporting propensities, computes the
Horvitz-Thompson total N_hat = sum(1/pi_i), the reporting rate
pi_star = n / N_hat, and the event rate q_star = sum(a_i) / N_hat, together
with plug-in variances that propagate first-stage uncertainty through the
kappa-weighted quadratic form in the survey covariance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .design_glm import PiModel
from .records import FirstStage, ReportedOffenses, resolve_propensities

__all__ = [
    "Z975",
    "RateEstimate",
    "ReportedOffenses",
    "GroupRates",
    "estimate_population_total",
    "estimate_rates",
    "grouped_rates",
    "ht_population_mean",
]

# two-sided 95% Wald critical value, pinned for reproducible reports
Z975 = 1.959964


@dataclass(frozen=True)
class RateEstimate:
    """Scalar estimate with its standard error and two-sided 95% interval.

    ``kappa`` is the ratio n/n_survey used to weight the first-stage variance
    term (zero when that term was omitted, see ``first_stage_omitted``).
    """

    value: float
    se: float
    ci_low: float
    ci_high: float
    kappa: float
    first_stage_omitted: bool = False

    def __post_init__(self):
        if self.se < 0:
            raise ValueError("standard error must be nonnegative")
        if not self.ci_low <= self.value <= self.ci_high:
            raise ValueError("confidence interval must contain the point estimate")


@dataclass(frozen=True)
class GroupRates:
    """Per-group output of :func:`grouped_rates`."""

    n_records: int
    total: RateEstimate
    pi_star: RateEstimate
    q_star: RateEstimate


def _wald(value: float, variance: float, kappa: float, omitted: bool) -> RateEstimate:
    se = float(np.sqrt(max(variance, 0.0)))
    return RateEstimate(
        value=value,
        se=se,
        ci_low=value - Z975 * se,
        ci_high=value + Z975 * se,
        kappa=kappa,
        first_stage_omitted=omitted,
    )


def _first_stage_quad(
    offenses: ReportedOffenses, pi: np.ndarray, first_stage: FirstStage | None
) -> tuple[float, float, bool]:
    """kappa * W' Sigma_v W with W = mean(exp(-gamma.z) * z) over reported records.

    exp(-gamma.z) z is the gradient of 1/pi(z; gamma), so W is the plug-in
    for the conditional mean of that gradient given reporting.
    """
    if first_stage is None:
        return 0.0, 0.0, True
    kappa = offenses.n / first_stage.n_survey
    w_vec = np.mean(
        offenses.z * np.exp(-(offenses.z @ first_stage.gamma_hat))[:, None], axis=0
    )
    return kappa * float(w_vec @ first_stage.sigma_v @ w_vec), kappa, False


def _total_estimate(
    offenses: ReportedOffenses, pi: np.ndarray, first_stage: FirstStage | None
) -> RateEstimate:
    n = offenses.n
    n_hat = float(np.sum(1.0 / pi))
    pi_star = n / n_hat
    quad, kappa, omitted = _first_stage_quad(offenses, pi, first_stage)
    v_total = pi_star**2 * (float(np.mean((1.0 - pi) / pi**2)) + quad)
    # SE on the total scale: the ratio-scale limit times the estimated total
    se_ratio = np.sqrt(max(v_total, 0.0) / n)
    return RateEstimate(
        value=n_hat,
        se=float(n_hat * se_ratio),
        ci_low=float(n_hat * (1.0 - Z975 * se_ratio)),
        ci_high=float(n_hat * (1.0 + Z975 * se_ratio)),
        kappa=kappa,
        first_stage_omitted=omitted,
    )


def _rate_estimates(
    offenses: ReportedOffenses, pi: np.ndarray, first_stage: FirstStage | None
) -> tuple[RateEstimate, RateEstimate]:
    n = offenses.n
    n_hat = float(np.sum(1.0 / pi))
    pi_star = n / n_hat
    q_star = float(np.sum(offenses.a)) / n_hat
    alpha_star = float(np.mean(offenses.a))
    quad, kappa, omitted = _first_stage_quad(offenses, pi, first_stage)

    v_pi = pi_star**3 * (float(np.mean((pi_star - pi) / pi**2)) + pi_star * quad)
    v_q = (
        pi_star**2
        * (
            alpha_star
            - 2.0 * q_star * float(np.mean(offenses.a / pi))
            + q_star**2 * float(np.mean(1.0 / pi**2))
        )
        + (q_star * pi_star) ** 2 * quad
    )
    return (
        _wald(pi_star, v_pi / n, kappa, omitted),
        _wald(q_star, v_q / n, kappa, omitted),
    )


def estimate_population_total(
    offenses: ReportedOffenses,
    model: PiModel | None,
    positivity_floor: float = 0.01,
    allow_below_floor: bool = False,
) -> RateEstimate:
    """Horvitz-Thompson estimate of the latent population total.

    Returns the total N_hat = sum_i 1/pi_i over reported records with a
    Wald interval derived from the ratio-scale plug-in variance. N_hat is
    never smaller than the number of reported records.
    """
    pi, first_stage = resolve_propensities(offenses, model, positivity_floor, allow_below_floor)
    return _total_estimate(offenses, pi, first_stage)


def estimate_rates(
    offenses: ReportedOffenses,
    model: PiModel | None,
    positivity_floor: float = 0.01,
    allow_below_floor: bool = False,
) -> tuple[RateEstimate, RateEstimate]:
    """Reporting rate pi_star = n/N_hat and event rate q_star = sum(a)/N_hat.

    Both are ratio (Hajek-type) estimators; q_star <= pi_star always, with
    equality only when every reported record has the event.
    """
    pi, first_stage = resolve_propensities(offenses, model, positivity_floor, allow_below_floor)
    return _rate_estimates(offenses, pi, first_stage)


def _subset(offenses: ReportedOffenses, mask: np.ndarray) -> ReportedOffenses:
    return ReportedOffenses(
        incident_id=offenses.incident_id[mask],
        x=offenses.x[mask],
        a=offenses.a[mask],
        x_names=offenses.x_names,
        z=None if offenses.z is None else offenses.z[mask],
        z_names=offenses.z_names,
        pi_external=None if offenses.pi_external is None else offenses.pi_external[mask],
    )


def grouped_rates(
    offenses: ReportedOffenses,
    model: PiModel | None,
    groups: np.ndarray,
    positivity_floor: float = 0.01,
    allow_below_floor: bool = False,
) -> dict[object, GroupRates]:
    """Total and rates within each level of a grouping key.

    Groups with zero records are simply absent from the result. kappa is
    computed per group against the survey size.
    """
    groups = np.asarray(groups)
    if len(groups) != offenses.n:
        raise ValueError("groups must have one label per record")
    pi, first_stage = resolve_propensities(offenses, model, positivity_floor, allow_below_floor)
    out: dict[object, GroupRates] = {}
    for label in np.unique(groups):
        mask = groups == label
        sub = _subset(offenses, mask)
        pi_sub = pi[mask]
        total = _total_estimate(sub, pi_sub, first_stage)
        pi_star, q_star = _rate_estimates(sub, pi_sub, first_stage)
        out[label] = GroupRates(
            n_records=int(mask.sum()), total=total, pi_star=pi_star, q_star=q_star
        )
    return out


def ht_population_mean(
    offenses: ReportedOffenses,
    model: PiModel | None,
    values: np.ndarray,
    positivity_floor: float = 0.01,
    allow_below_floor: bool = False,
) -> float:
    """Estimate of the full-population mean of a per-record quantity.

    Computes sum(values/pi) / N_hat, the change-of-measure estimate of the
    population mean from reported records alone.
    """
    values = np.asarray(values, dtype=float)
    if values.shape != (offenses.n,):
        raise ValueError("values must have one entry per record")
    pi, _ = resolve_propensities(
        offenses, model, positivity_floor, allow_below_floor, warn_missing_first_stage=False
    )
    return float(np.sum(values / pi) / np.sum(1.0 / pi))
