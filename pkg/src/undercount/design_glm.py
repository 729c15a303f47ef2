"""Survey-weighted logistic regression with design-based covariance.

Fits the reporting-propensity model on weighted survey data and estimates the
covariance of the coefficients under stratified, PSU-clustered sampling by
Taylor linearization of the weighted score (between-PSU variance within
strata, sandwiched by the inverse weighted information).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, xlogy

from .exceptions import (
    FeatureMismatch,
    LonelyPSU,
    NoConvergence,
    Separation,
    SingularDesign,
)

__all__ = [
    "FitConfig",
    "DesignedSurvey",
    "PiModel",
    "fit_weighted_logit",
    "design_covariance",
    "predict_pi",
    "weighted_score",
    "weighted_score_jacobian",
]


@dataclass(frozen=True)
class FitConfig:
    """Solver settings shared by the iteratively reweighted least squares fits.

    ``tol`` bounds the relative coefficient change between iterations,
    ``score_tol`` the max-norm of the weight-normalized score at the solution.
    """

    tol: float = 1e-8
    score_tol: float = 1e-8
    max_iter: int = 100
    max_step_halvings: int = 10
    covariate_bound: float = 1e3
    separation_prob_tol: float = 1e-10


@dataclass(frozen=True)
class DesignedSurvey:
    """Victimization survey records with their sampling-design labels.

    Parameters
    ----------
    z : ndarray of shape (n, d_z)
        Covariate matrix; the first column must be the intercept (all ones).
    r : ndarray of shape (n,)
        Binary reporting outcome (1 = the incident became known to police).
    weight : ndarray of shape (n,)
        Positive survey weights (inverse inclusion probabilities).
    stratum, psu : ndarray of shape (n,)
        Stratum and primary-sampling-unit labels.
    feature_names : tuple of str
        Column names of ``z``; the first entry must be ``"intercept"``.
    """

    z: np.ndarray
    r: np.ndarray
    weight: np.ndarray
    stratum: np.ndarray
    psu: np.ndarray
    feature_names: tuple[str, ...]

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        r = np.asarray(self.r, dtype=float)
        w = np.asarray(self.weight, dtype=float)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "stratum", np.asarray(self.stratum))
        object.__setattr__(self, "psu", np.asarray(self.psu))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if z.ndim != 2:
            raise ValueError("z must be a 2-d array")
        n, d = z.shape
        if len(self.feature_names) != d:
            raise ValueError("feature_names must have one entry per column of z")
        if self.feature_names[0] != "intercept":
            raise ValueError('the first feature must be named "intercept"')
        if not np.all(z[:, 0] == 1.0):
            raise ValueError("the first column of z must be the intercept (all ones)")
        for arr, name in ((r, "r"), (w, "weight"), (self.stratum, "stratum"), (self.psu, "psu")):
            if len(arr) != n:
                raise ValueError(f"{name} must have length {n}")
        if not np.all(np.isin(r, (0.0, 1.0))):
            raise ValueError("r must be binary")
        if not (np.all(np.isfinite(w)) and np.all(w > 0)):
            raise ValueError("weights must be positive and finite")
        if not np.all(np.isfinite(z)):
            raise ValueError("covariates must be finite")

    @property
    def n(self) -> int:
        return self.z.shape[0]


@dataclass(frozen=True)
class PiModel:
    """Fitted reporting-propensity model.

    ``sigma_v`` estimates the covariance of sqrt(n_survey) * (gamma_hat -
    gamma0); it is ``None`` until :func:`design_covariance` fills it in.
    ``population_fraction`` is the sampled fraction of the finite population
    used for the superpopulation variance term (zero when the survey samples
    a negligible share).
    """

    gamma_hat: np.ndarray
    feature_names: tuple[str, ...]
    n_survey: int
    sigma_v: np.ndarray | None = None
    population_fraction: float = 0.0

    def __post_init__(self):
        gamma = np.asarray(self.gamma_hat, dtype=float)
        object.__setattr__(self, "gamma_hat", gamma)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if gamma.ndim != 1 or len(self.feature_names) != gamma.size:
            raise ValueError("gamma_hat and feature_names must have matching length")
        if self.feature_names[0] != "intercept":
            raise ValueError('the first feature must be named "intercept"')
        if not 0.0 <= self.population_fraction <= 1.0:
            raise ValueError("population_fraction must lie in [0, 1]")
        if self.sigma_v is not None:
            sigma = np.asarray(self.sigma_v, dtype=float)
            if sigma.shape != (gamma.size, gamma.size):
                raise ValueError("sigma_v must be square with one row per coefficient")
            if not np.allclose(sigma, sigma.T, atol=1e-10):
                raise ValueError("sigma_v must be symmetric")
            object.__setattr__(self, "sigma_v", sigma)

    @property
    def d(self) -> int:
        return self.gamma_hat.size

    def predict(self, z: np.ndarray, feature_names: tuple[str, ...] | None = None) -> np.ndarray:
        return predict_pi(self, z, feature_names)


def predict_pi(
    model: PiModel,
    z: np.ndarray,
    feature_names: tuple[str, ...] | None = None,
) -> np.ndarray:
    """Reporting propensity expit(gamma_hat . z) for one or many covariate rows.

    Raises
    ------
    FeatureMismatch
        If the arity or the name order of ``z`` disagrees with the model.
    """
    if feature_names is not None and tuple(feature_names) != model.feature_names:
        raise FeatureMismatch(
            f"covariates {tuple(feature_names)} do not match model features {model.feature_names}"
        )
    z = np.asarray(z, dtype=float)
    width = z.shape[-1] if z.ndim else 0
    if z.ndim not in (1, 2) or width != model.d:
        raise FeatureMismatch(f"expected {model.d} covariates, got shape {z.shape}")
    return expit(z @ model.gamma_hat)


def weighted_score(gamma: np.ndarray, survey: DesignedSurvey) -> np.ndarray:
    """Weighted estimating function sum_i w_i (r_i - expit(gamma.z_i)) z_i."""
    p = expit(survey.z @ np.asarray(gamma, dtype=float))
    return survey.z.T @ (survey.weight * (survey.r - p))


def weighted_score_jacobian(gamma: np.ndarray, survey: DesignedSurvey) -> np.ndarray:
    """Jacobian of :func:`weighted_score` with respect to gamma."""
    p = expit(survey.z @ np.asarray(gamma, dtype=float))
    return -(survey.z * (survey.weight * p * (1.0 - p))[:, None]).T @ survey.z


def _weighted_deviance(survey: DesignedSurvey, p: np.ndarray) -> float:
    return -2.0 * float(
        np.sum(survey.weight * (xlogy(survey.r, p) + xlogy(1.0 - survey.r, 1.0 - p)))
    )


def _solve_information(mat: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    # reject numerically rank-deficient information matrices before solving
    if np.linalg.cond(mat) > 1e12:
        raise SingularDesign("weighted Gram matrix is rank deficient")
    return np.linalg.solve(mat, rhs)


def fit_weighted_logit(survey: DesignedSurvey, config: FitConfig = FitConfig()) -> PiModel:
    """Fit the reporting-propensity logistic model by weighted IRLS.

    Solves ``sum_i w_i (r_i - expit(gamma . z_i)) z_i = 0`` with step-halving
    whenever the weighted deviance increases. The returned model carries no
    covariance; see :func:`design_covariance`.

    Raises
    ------
    SingularDesign
        Rank-deficient weighted Gram matrix.
    Separation
        Outcomes separable (no finite solution), including the degenerate
        all-identical-outcomes case.
    NoConvergence
        Iteration cap reached.
    """
    n, d = survey.z.shape
    if n < d:
        raise ValueError(f"need at least {d} records to fit {d} coefficients")
    if survey.r.min() == survey.r.max():
        raise Separation("all outcomes identical; the weighted MLE does not exist")
    max_abs_z = float(np.max(np.abs(survey.z)))
    if max_abs_z >= config.covariate_bound:
        raise ValueError(
            f"covariates exceed the configured bound {config.covariate_bound}"
        )
    coef_bound = 1e3 / max(1.0, max_abs_z)
    total_w = float(survey.weight.sum())

    gamma = np.zeros(d)
    p = expit(survey.z @ gamma)
    deviance = _weighted_deviance(survey, p)
    for iteration in range(1, config.max_iter + 1):
        score = survey.z.T @ (survey.weight * (survey.r - p))
        info = (survey.z * (survey.weight * p * (1.0 - p))[:, None]).T @ survey.z
        step = _solve_information(info, score)
        new_gamma = gamma + step
        new_p = expit(survey.z @ new_gamma)
        new_dev = _weighted_deviance(survey, new_p)
        halvings = 0
        while new_dev > deviance + 1e-12 * abs(deviance) and halvings < config.max_step_halvings:
            step = step / 2.0
            new_gamma = gamma + step
            new_p = expit(survey.z @ new_gamma)
            new_dev = _weighted_deviance(survey, new_p)
            halvings += 1

        rel_change = np.max(np.abs(step)) / max(1.0, np.max(np.abs(new_gamma)))
        gamma, p, deviance = new_gamma, new_p, new_dev

        saturated = p.min() < config.separation_prob_tol or p.max() > 1.0 - config.separation_prob_tol
        if saturated and np.max(np.abs(gamma)) > coef_bound:
            raise Separation("fitted probabilities saturated while coefficients diverge")

        score_norm = np.max(np.abs(survey.z.T @ (survey.weight * (survey.r - p)))) / total_w
        if rel_change < config.tol and score_norm < config.score_tol:
            # one full polishing step: quadratic convergence leaves the
            # returned root at machine precision, independent of the path
            score = survey.z.T @ (survey.weight * (survey.r - p))
            info = (survey.z * (survey.weight * p * (1.0 - p))[:, None]).T @ survey.z
            gamma = gamma + np.linalg.solve(info, score)
            return PiModel(gamma_hat=gamma, feature_names=survey.feature_names, n_survey=n)

    raise NoConvergence(f"weighted IRLS did not converge in {config.max_iter} iterations")


def _psu_score_totals(
    scores: np.ndarray, stratum: np.ndarray, psu: np.ndarray
) -> list[tuple[object, np.ndarray]]:
    """Per-stratum PSU totals of score contributions, in sorted label order."""
    totals = []
    for h in np.unique(stratum):
        in_h = stratum == h
        psu_h = psu[in_h]
        rows = scores[in_h]
        labels = np.unique(psu_h)
        t = np.vstack([rows[psu_h == c].sum(axis=0) for c in labels])
        totals.append((h, t))
    return totals


def design_covariance(
    model: PiModel,
    survey: DesignedSurvey,
    lonely_psu: str = "fail",
) -> PiModel:
    """Design-based covariance of the fitted reporting model.

    Returns a copy of ``model`` whose ``sigma_v`` estimates the covariance of
    sqrt(n_survey) * (gamma_hat - gamma0) by between-PSU linearization within
    strata (with the per-stratum m/(m-1) correction), sandwiched by the
    inverse weighted information. When ``model.population_fraction`` is
    positive, a superpopulation term proportional to that fraction is added.

    Parameters
    ----------
    lonely_psu : {"fail", "center"}
        How to treat strata with a single PSU: raise :class:`LonelyPSU`, or
        center the lonely PSU total at the grand mean of all PSU totals.
    """
    if model.feature_names != survey.feature_names:
        raise FeatureMismatch("model was not fitted on these survey features")
    if model.n_survey != survey.n:
        raise ValueError("model was not fitted on this survey sample")
    if lonely_psu not in ("fail", "center"):
        raise ValueError('lonely_psu must be "fail" or "center"')

    p = expit(survey.z @ model.gamma_hat)
    scores = survey.z * (survey.weight * (survey.r - p))[:, None]
    info = (survey.z * (survey.weight * p * (1.0 - p))[:, None]).T @ survey.z
    if np.linalg.cond(info) > 1e12:
        raise SingularDesign("weighted Gram matrix is rank deficient")
    info_inv = np.linalg.inv(info)

    totals = _psu_score_totals(scores, survey.stratum, survey.psu)
    grand_mean = np.vstack([t for _, t in totals]).mean(axis=0)
    d = model.d
    v_design = np.zeros((d, d))
    for h, t in totals:
        m = t.shape[0]
        if m < 2:
            if lonely_psu == "fail":
                raise LonelyPSU(f"stratum {h!r} has a single PSU")
            dev = t - grand_mean
            v_design += dev.T @ dev
        else:
            dev = t - t.mean(axis=0)
            v_design += (m / (m - 1.0)) * (dev.T @ dev)

    sigma = survey.n * (info_inv @ v_design @ info_inv)

    if model.population_fraction > 0.0:
        # superpopulation term: within-stratum weighted variance of the
        # unweighted estimating contributions, at population-total scale
        h_contrib = survey.z * (survey.r - p)[:, None]
        v_super = np.zeros((d, d))
        for h in np.unique(survey.stratum):
            in_h = survey.stratum == h
            w_h = survey.weight[in_h]
            rows = h_contrib[in_h]
            mean_h = (w_h[:, None] * rows).sum(axis=0) / w_h.sum()
            dev = rows - mean_h
            v_super += (w_h[:, None] * dev).T @ dev
        pop_total = float(survey.weight.sum())
        sigma = sigma + model.population_fraction * pop_total * (info_inv @ v_super @ info_inv)

    sigma = 0.5 * (sigma + sigma.T)
    return dataclasses.replace(model, sigma_v=sigma)
