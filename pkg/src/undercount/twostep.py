"""Two-step inverse-propensity logistic model for the conditional event probability.

Solves the corrected estimating equation
``(1/n) sum_i [a_i - q(x_i; theta)/pi_i] x_i = 0`` on reported records, where
``pi_i`` comes from a first-stage reporting model, and assembles the two-step
sandwich covariance ``J_theta^{-1} Xi J_theta^{-1}`` whose middle matrix adds
the kappa-weighted first-stage term to the outer product of the estimating
function.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .design_glm import FitConfig, PiModel
from .exceptions import (
    NoConvergence,
    NonmonotoneFitWarning,
    Separation,
    SingularDesign,
)
from .records import FirstStage, ReportedOffenses, resolve_propensities

__all__ = [
    "ArrestFit",
    "fit_arrest_model",
    "arrest_sandwich_covariance",
    "compare_unadjusted",
    "arrest_score",
    "arrest_score_jacobian",
]


@dataclass(frozen=True)
class ArrestFit:
    """Solution of the (possibly propensity-corrected) logistic estimating equation.

    ``sigma`` estimates the covariance of sqrt(n) * (theta_hat - theta0) and
    is ``None`` until :func:`arrest_sandwich_covariance` fills it; the
    intermediate matrices ``j_theta``, ``j_gamma`` and ``xi`` are retained for
    audit. ``n_ratio_above_one`` counts records where the fitted mean divided
    by the propensity exceeds one.
    """

    theta_hat: np.ndarray
    feature_names: tuple[str, ...]
    n: int
    iterations: int
    n_ratio_above_one: int = 0
    sigma: np.ndarray | None = None
    j_theta: np.ndarray | None = None
    j_gamma: np.ndarray | None = None
    xi: np.ndarray | None = None
    first_stage_omitted: bool = False

    def _require_sigma(self) -> np.ndarray:
        if self.sigma is None:
            raise ValueError("covariance not computed yet; run arrest_sandwich_covariance")
        return self.sigma

    @property
    def se(self) -> np.ndarray:
        """Per-coefficient standard errors sqrt(diag(sigma)/n)."""
        return np.sqrt(np.diag(self._require_sigma()) / self.n)

    @property
    def odds_ratios(self) -> np.ndarray:
        return np.exp(self.theta_hat)

    @property
    def odds_ratio_se(self) -> np.ndarray:
        """Delta-method standard errors of the odds ratios."""
        return self.odds_ratios * self.se

    @property
    def p_values(self) -> np.ndarray:
        """Two-sided Wald p-values per coefficient."""
        se = self.se
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.abs(self.theta_hat) / se
        return 2.0 * norm.sf(t)


def arrest_score(theta: np.ndarray, x: np.ndarray, a: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """Mean estimating function (1/n) sum_i (a_i - q(x_i;theta)/pi_i) x_i."""
    q = expit(x @ np.asarray(theta, dtype=float))
    return x.T @ (a - q / pi) / x.shape[0]


def arrest_score_jacobian(theta: np.ndarray, x: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """Jacobian of :func:`arrest_score` with respect to theta."""
    q = expit(x @ np.asarray(theta, dtype=float))
    return -(x * (q * (1.0 - q) / pi)[:, None]).T @ x / x.shape[0]


def _check_design(x: np.ndarray, names: tuple[str, ...]) -> None:
    spans = np.ptp(x, axis=0)
    constant = [names[j] for j in range(1, x.shape[1]) if spans[j] == 0.0]
    if constant:
        raise SingularDesign(f"constant non-intercept columns: {', '.join(constant)}")
    if np.linalg.matrix_rank(x) < x.shape[1]:
        raise SingularDesign("design matrix is rank deficient")


def _plain_logit_mle(
    x: np.ndarray, a: np.ndarray, config: FitConfig
) -> tuple[np.ndarray, int]:
    """Ordinary logistic MLE by Newton iterations with step-halving on the deviance."""
    if a.min() == a.max():
        raise Separation("all outcomes identical; the logistic MLE does not exist")
    n, d = x.shape
    coef_bound = 1e3 / max(1.0, float(np.max(np.abs(x))))
    theta = np.zeros(d)
    p = expit(x @ theta)

    def deviance(p):
        eps = 1e-300
        return -2.0 * float(np.sum(a * np.log(p + eps) + (1.0 - a) * np.log(1.0 - p + eps)))

    dev = deviance(p)
    for iteration in range(1, config.max_iter + 1):
        grad = x.T @ (a - p)
        info = (x * (p * (1.0 - p))[:, None]).T @ x
        if np.linalg.cond(info) > 1e12:
            raise SingularDesign("Gram matrix is rank deficient")
        step = np.linalg.solve(info, grad)
        new_theta = theta + step
        new_p = expit(x @ new_theta)
        new_dev = deviance(new_p)
        halvings = 0
        while new_dev > dev + 1e-12 * abs(dev) and halvings < config.max_step_halvings:
            step = step / 2.0
            new_theta = theta + step
            new_p = expit(x @ new_theta)
            new_dev = deviance(new_p)
            halvings += 1
        rel = np.max(np.abs(step)) / max(1.0, np.max(np.abs(new_theta)))
        theta, p, dev = new_theta, new_p, new_dev
        saturated = p.min() < config.separation_prob_tol or p.max() > 1.0 - config.separation_prob_tol
        if saturated and np.max(np.abs(theta)) > coef_bound:
            raise Separation("fitted probabilities saturated while coefficients diverge")
        score_norm = np.max(np.abs(x.T @ (a - p))) / n
        if rel < config.tol and score_norm < config.score_tol:
            # polish to a machine-precision root
            info = (x * (p * (1.0 - p))[:, None]).T @ x
            theta = theta + np.linalg.solve(info, x.T @ (a - p))
            return theta, iteration
    raise NoConvergence(f"logistic MLE did not converge in {config.max_iter} iterations")


def _solve_corrected(
    x: np.ndarray,
    a: np.ndarray,
    pi: np.ndarray,
    config: FitConfig,
    theta0: np.ndarray,
) -> tuple[np.ndarray, int]:
    """Damped Newton iterations on the propensity-corrected estimating equation.

    The corrected equation is not a likelihood score, so step-halving uses the
    max-norm of the estimating function as merit.
    """
    n, d = x.shape
    coef_bound = 1e3 / max(1.0, float(np.max(np.abs(x))))
    theta = theta0.copy()
    score = arrest_score(theta, x, a, pi)
    for iteration in range(1, config.max_iter + 1):
        jac = arrest_score_jacobian(theta, x, pi)
        if np.linalg.cond(jac) > 1e12:
            raise SingularDesign("working information matrix is rank deficient")
        step = np.linalg.solve(jac, -score)
        new_theta = theta + step
        new_score = arrest_score(new_theta, x, a, pi)
        halvings = 0
        while (
            np.max(np.abs(new_score)) > np.max(np.abs(score)) * (1.0 - 1e-4)
            and halvings < config.max_step_halvings
        ):
            step = step / 2.0
            new_theta = theta + step
            new_score = arrest_score(new_theta, x, a, pi)
            halvings += 1
        rel = np.max(np.abs(step)) / max(1.0, np.max(np.abs(new_theta)))
        theta, score = new_theta, new_score
        q = expit(x @ theta)
        saturated = q.min() < config.separation_prob_tol or q.max() > 1.0 - config.separation_prob_tol
        if saturated and np.max(np.abs(theta)) > coef_bound:
            raise Separation("fitted probabilities saturated while coefficients diverge")
        if rel < config.tol and np.max(np.abs(score)) < config.score_tol:
            # polish to a machine-precision root
            theta = theta - np.linalg.solve(arrest_score_jacobian(theta, x, pi), score)
            return theta, iteration
    raise NoConvergence(f"corrected estimating equation did not converge in {config.max_iter} iterations")


def _count_ratio_above_one(x: np.ndarray, theta: np.ndarray, pi: np.ndarray) -> int:
    q = expit(x @ theta)
    count = int(np.sum(q / pi > 1.0))
    if count > 0.01 * x.shape[0]:
        warnings.warn(
            f"fitted mean exceeds the propensity on {count} of {x.shape[0]} records; "
            "the root is reported without clipping",
            NonmonotoneFitWarning,
            stacklevel=3,
        )
    return count


def fit_arrest_model(
    offenses: ReportedOffenses,
    model: PiModel | None,
    config: FitConfig = FitConfig(),
    positivity_floor: float = 0.01,
    allow_below_floor: bool = False,
) -> ArrestFit:
    """Fit the propensity-corrected logistic model for the event probability.

    Initializes at the unadjusted logistic MLE and iterates damped Newton
    steps on the corrected estimating equation. The returned fit carries no
    covariance; see :func:`arrest_sandwich_covariance`.

    Raises
    ------
    SingularDesign, Separation, NoConvergence
        As for the first-stage fit; a constant non-intercept column is
        rejected up front.
    """
    if offenses.a.min() == offenses.a.max():
        raise Separation("all arrest indicators identical; no finite root exists")
    _check_design(offenses.x, offenses.x_names)
    pi, first_stage = resolve_propensities(
        offenses, model, positivity_floor, allow_below_floor, warn_missing_first_stage=False
    )
    theta_init, _ = _plain_logit_mle(offenses.x, offenses.a, config)
    theta, iterations = _solve_corrected(offenses.x, offenses.a, pi, config, theta_init)
    return ArrestFit(
        theta_hat=theta,
        feature_names=offenses.x_names,
        n=offenses.n,
        iterations=iterations,
        n_ratio_above_one=_count_ratio_above_one(offenses.x, theta, pi),
        first_stage_omitted=first_stage is None,
    )


def _sandwich(
    x: np.ndarray,
    a: np.ndarray,
    pi: np.ndarray,
    theta: np.ndarray,
    z: np.ndarray | None,
    first_stage: FirstStage | None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None, np.ndarray]:
    n = x.shape[0]
    q = expit(x @ theta)
    j_theta = (x * (q * (1.0 - q) / pi)[:, None]).T @ x / n
    resid = a - q / pi
    xi = (x * (resid**2)[:, None]).T @ x / n
    j_gamma = None
    if first_stage is not None:
        kappa = n / first_stage.n_survey
        j_gamma = (x * (q * np.exp(-(z @ first_stage.gamma_hat)))[:, None]).T @ z / n
        xi = xi + kappa * j_gamma @ first_stage.sigma_v @ j_gamma.T
    j_inv = np.linalg.inv(j_theta)
    sigma = j_inv @ xi @ j_inv
    return 0.5 * (sigma + sigma.T), j_theta, j_gamma, xi


def arrest_sandwich_covariance(
    fit: ArrestFit,
    offenses: ReportedOffenses,
    model: PiModel | None,
    positivity_floor: float = 0.01,
    allow_below_floor: bool = False,
) -> ArrestFit:
    """Two-step sandwich covariance for a converged fit.

    The middle matrix is the sample second moment of the estimating function
    over reported records plus, when a survey covariance is available, the
    kappa-weighted quadratic form propagating first-stage uncertainty. In
    external-propensity mode the covariance is emitted without that term and
    flagged (:class:`MissingFirstStageCovariance` warning).
    """
    if fit.feature_names != offenses.x_names:
        raise ValueError("fit and records disagree on the feature set")
    pi, first_stage = resolve_propensities(offenses, model, positivity_floor, allow_below_floor)
    sigma, j_theta, j_gamma, xi = _sandwich(
        offenses.x, offenses.a, pi, fit.theta_hat, offenses.z, first_stage
    )
    return dataclasses.replace(
        fit,
        sigma=sigma,
        j_theta=j_theta,
        j_gamma=j_gamma,
        xi=xi,
        first_stage_omitted=first_stage is None,
    )


def compare_unadjusted(
    offenses: ReportedOffenses,
    config: FitConfig = FitConfig(),
) -> ArrestFit:
    """Plain logistic fit on (x, a) with the classical sandwich covariance.

    Estimates the event probability among reported records only, for
    side-by-side reporting against the corrected fit.
    """
    if offenses.a.min() == offenses.a.max():
        raise Separation("all arrest indicators identical; the logistic MLE does not exist")
    _check_design(offenses.x, offenses.x_names)
    theta, iterations = _plain_logit_mle(offenses.x, offenses.a, config)
    ones = np.ones(offenses.n)
    sigma, j_theta, _, xi = _sandwich(offenses.x, offenses.a, ones, theta, None, None)
    return ArrestFit(
        theta_hat=theta,
        feature_names=offenses.x_names,
        n=offenses.n,
        iterations=iterations,
        sigma=sigma,
        j_theta=j_theta,
        xi=xi,
    )
