"""Generalized estimating equations for multi-offender incidents.

Extends the two-step event model to clustered records with an exchangeable
working correlation. Each incident contributes a block
``X_i' D_i W_i^{-1} (a_i - q_i / pi_i)`` to the estimating equation, where
``W_i = D_i^{1/2} C(alpha) D_i^{1/2}`` and ``pi_i`` is the incident-level
reporting propensity. The sandwich covariance mirrors the single-offender
two-step form with per-cluster contributions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .design_glm import FitConfig, PiModel
from .exceptions import (
    InvalidCorrelation,
    NoConvergence,
    NoMultiOffenderClusters,
    NonmonotoneFitWarning,
    SchemaError,
    Separation,
    SingularDesign,
)
from .records import ReportedOffenses, resolve_propensity_parts
from .twostep import _check_design, _plain_logit_mle

__all__ = [
    "Clusters",
    "GEEFit",
    "build_clusters",
    "exchangeable_inverse",
    "estimate_exchangeable_alpha",
    "fit_arrest_gee",
]

_VAR_FLOOR = 1e-12


@dataclass(frozen=True)
class Clusters:
    """Reported incidents grouped into clusters of offender-level rows.

    Offender rows are stored contiguously per cluster: cluster ``i`` owns rows
    ``offsets[i]:offsets[i] + sizes[i]``. ``z`` and ``pi_external`` are
    incident-level (one row per cluster).
    """

    incident_ids: np.ndarray
    x: np.ndarray
    a: np.ndarray
    sizes: np.ndarray
    offsets: np.ndarray
    x_names: tuple[str, ...]
    z: np.ndarray | None = None
    z_names: tuple[str, ...] | None = None
    pi_external: np.ndarray | None = None

    @property
    def n_clusters(self) -> int:
        return self.sizes.size

    @property
    def n_offenders(self) -> int:
        return self.x.shape[0]

    @property
    def max_size(self) -> int:
        return int(self.sizes.max()) if self.sizes.size else 0


def build_clusters(offenses: ReportedOffenses) -> Clusters:
    """Group offender-level records into incident clusters.

    Records of an incident need not be contiguous in the input, but rows of
    the same incident must agree on the incident covariates (and on any
    external propensity); conflicting values raise :class:`SchemaError`.
    Clusters are ordered by incident id for deterministic reductions.
    """
    ids, codes = np.unique(offenses.incident_id, return_inverse=True)
    order = np.argsort(codes, kind="stable")
    codes_sorted = codes[order]
    sizes = np.bincount(codes_sorted, minlength=ids.size)
    offsets = np.concatenate(([0], np.cumsum(sizes)[:-1]))

    z = None
    if offenses.z is not None:
        z_rows = offenses.z[order]
        z = z_rows[offsets]
        for i in range(ids.size):
            block = z_rows[offsets[i] : offsets[i] + sizes[i]]
            if not np.all(block == block[0]):
                raise SchemaError(f"incident {ids[i]!r} has conflicting incident covariates")
    pi_external = None
    if offenses.pi_external is not None:
        pi_rows = offenses.pi_external[order]
        pi_external = pi_rows[offsets]
        for i in range(ids.size):
            block = pi_rows[offsets[i] : offsets[i] + sizes[i]]
            if not np.all(block == block[0]):
                raise SchemaError(f"incident {ids[i]!r} has conflicting external propensities")

    return Clusters(
        incident_ids=ids,
        x=offenses.x[order],
        a=offenses.a[order],
        sizes=sizes.astype(np.int64),
        offsets=offsets.astype(np.int64),
        x_names=offenses.x_names,
        z=z,
        z_names=offenses.z_names,
        pi_external=pi_external,
    )


@dataclass(frozen=True)
class GEEFit:
    """GEE solution with its working correlation and sandwich covariance."""

    theta_hat: np.ndarray
    alpha_hat: float
    feature_names: tuple[str, ...]
    n_clusters: int
    n_offenders: int
    iterations: int
    sigma_gee: np.ndarray
    j_theta: np.ndarray
    j_gamma: np.ndarray | None
    xi: np.ndarray
    n_ratio_above_one: int = 0
    first_stage_omitted: bool = False

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.sigma_gee) / self.n_clusters)

    @property
    def odds_ratios(self) -> np.ndarray:
        return np.exp(self.theta_hat)

    @property
    def odds_ratio_se(self) -> np.ndarray:
        return self.odds_ratios * self.se

    @property
    def p_values(self) -> np.ndarray:
        se = self.se
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.abs(self.theta_hat) / se
        return 2.0 * norm.sf(t)


def exchangeable_inverse(size: int, alpha: float) -> np.ndarray:
    """Closed-form inverse of the exchangeable correlation matrix.

    ``C(alpha)`` has ones on the diagonal and ``alpha`` elsewhere; its inverse
    is ``(1-alpha)^{-1} [I - alpha / (1 + (size-1) alpha) J]`` with ``J`` the
    all-ones matrix. ``alpha`` must keep ``C`` positive definite
    (``-1/(size-1) < alpha < 1``); any value is accepted for size one.
    """
    if size < 1:
        raise ValueError("cluster size must be at least one")
    if size == 1:
        return np.ones((1, 1))
    if not -1.0 / (size - 1) < alpha < 1.0:
        raise InvalidCorrelation(
            f"alpha={alpha} leaves the {size}x{size} exchangeable matrix non positive definite"
        )
    shrink = alpha / (1.0 + (size - 1) * alpha)
    return (np.eye(size) - shrink * np.ones((size, size))) / (1.0 - alpha)


def _alpha_bounds(max_size: int) -> tuple[float, float]:
    lower = -1.0 / (max_size - 1) + 1e-6 if max_size >= 2 else -1.0 + 1e-6
    return lower, 1.0 - 1e-6


def _pearson_residuals(
    clusters: Clusters, theta: np.ndarray, pi_cluster: np.ndarray
) -> np.ndarray:
    pi_off = np.repeat(pi_cluster, clusters.sizes)
    q = expit(clusters.x @ theta)
    d = np.clip(q * (1.0 - q), _VAR_FLOOR, None)
    return (clusters.a - q / pi_off) / np.sqrt(d)


def _moment_alpha(clusters: Clusters, resid: np.ndarray) -> float:
    multi = clusters.sizes >= 2
    sums = np.add.reduceat(resid, clusters.offsets)
    sq_sums = np.add.reduceat(resid**2, clusters.offsets)
    pair_products = 0.5 * (sums**2 - sq_sums)
    pair_counts = clusters.sizes * (clusters.sizes - 1) / 2.0
    alpha = float(pair_products[multi].sum() / pair_counts[multi].sum())
    lower, upper = _alpha_bounds(clusters.max_size)
    return float(np.clip(alpha, lower, upper))


def estimate_exchangeable_alpha(
    clusters: Clusters,
    theta: np.ndarray,
    model: PiModel | None,
    positivity_floor: float = 0.01,
    allow_below_floor: bool = False,
) -> float:
    """Moment estimate of the exchangeable correlation at a given theta.

    Averages within-cluster pairwise products of propensity-adjusted Pearson
    residuals, normalized by the number of pairs, and clamps the result into
    the range keeping every working correlation matrix positive definite.
    Falls back to zero (with a warning) when no cluster has two members.
    """
    if not np.any(clusters.sizes >= 2):
        warnings.warn(
            "no multi-offender clusters; working correlation set to zero",
            NoMultiOffenderClusters,
            stacklevel=2,
        )
        return 0.0
    pi_cluster, _ = resolve_propensity_parts(
        clusters.z,
        clusters.z_names,
        clusters.pi_external,
        model,
        positivity_floor,
        allow_below_floor,
        warn_missing_first_stage=False,
    )
    theta = np.asarray(theta, dtype=float)
    return _moment_alpha(clusters, _pearson_residuals(clusters, theta, pi_cluster))


class _BySize:
    """Clusters regrouped by common size for batched linear algebra."""

    def __init__(self, clusters: Clusters):
        self.groups: list[tuple[int, np.ndarray, np.ndarray, np.ndarray]] = []
        for size in np.unique(clusters.sizes):
            which = np.flatnonzero(clusters.sizes == size)
            rows = (clusters.offsets[which][:, None] + np.arange(size)[None, :]).ravel()
            x = clusters.x[rows].reshape(which.size, size, -1)
            a = clusters.a[rows].reshape(which.size, size)
            self.groups.append((int(size), which, x, a))


def _gee_terms(
    by_size: _BySize,
    pi_cluster: np.ndarray,
    z_cluster: np.ndarray | None,
    gamma: np.ndarray | None,
    theta: np.ndarray,
    alpha: float,
    d_x: int,
):
    """Per-cluster score contributions, Fisher information, and J_gamma."""
    n_c = pi_cluster.size
    h = np.empty((n_c, d_x))
    info = np.zeros((d_x, d_x))
    j_gamma = None if gamma is None else 0.0
    row = 0
    for size, which, x, a in by_size.groups:
        pi_g = pi_cluster[which]
        q = expit(x @ theta)
        d = np.clip(q * (1.0 - q), _VAR_FLOOR, None)
        sqrt_d = np.sqrt(d)
        shrink = alpha / (1.0 + (size - 1) * alpha)
        one_minus = 1.0 - alpha

        # D W^{-1} v = D^{1/2} C^{-1} D^{-1/2} v, with C^{-1} applied in closed form
        resid = a - q / pi_g[:, None]
        r_tilde = resid / sqrt_d
        c_r = (r_tilde - shrink * r_tilde.sum(axis=1, keepdims=True)) / one_minus
        u = sqrt_d * c_r
        h_g = np.einsum("mkd,mk->md", x, u)
        h[row : row + which.size] = h_g

        b = sqrt_d[:, :, None] * x
        c_b = (b - shrink * b.sum(axis=1, keepdims=True)) / one_minus
        info += np.einsum("mkd,mke,m->de", b, c_b, 1.0 / pi_g)

        if gamma is not None:
            q_tilde = q / sqrt_d
            c_q = (q_tilde - shrink * q_tilde.sum(axis=1, keepdims=True)) / one_minus
            dq = sqrt_d * c_q
            g = np.einsum("mkd,mk->md", x, dq)
            expneg = np.exp(-(z_cluster[which] @ gamma))
            j_gamma = j_gamma + np.einsum("md,m,me->de", g, expneg, z_cluster[which])
        row += which.size

    score = h.sum(axis=0) / n_c
    info /= n_c
    if gamma is not None:
        j_gamma = j_gamma / n_c
    return score, info, h, j_gamma


def fit_arrest_gee(
    clusters: Clusters,
    model: PiModel | None,
    config: FitConfig = FitConfig(),
    positivity_floor: float = 0.01,
    allow_below_floor: bool = False,
    fix_alpha: float | None = None,
) -> GEEFit:
    """Fit the clustered event model by Fisher scoring with alternating alpha updates.

    One working-correlation update follows each theta step; convergence
    requires both the coefficient and the correlation updates to settle.
    ``fix_alpha`` pins the working correlation instead of estimating it
    (``fix_alpha=0.0`` gives the working-independence solution).
    """
    if clusters.a.min() == clusters.a.max():
        raise Separation("all arrest indicators identical; no finite root exists")
    _check_design(clusters.x, clusters.x_names)
    pi_cluster, first_stage = resolve_propensity_parts(
        clusters.z,
        clusters.z_names,
        clusters.pi_external,
        model,
        positivity_floor,
        allow_below_floor,
    )
    lower, upper = _alpha_bounds(clusters.max_size)
    if fix_alpha is not None and not lower - 1e-12 <= fix_alpha <= upper + 1e-12:
        raise InvalidCorrelation(
            f"fixed alpha={fix_alpha} outside the positive-definite range "
            f"[{lower:.6g}, {upper:.6g}] for clusters up to size {clusters.max_size}"
        )
    has_multi = bool(np.any(clusters.sizes >= 2))
    if not has_multi and fix_alpha is None:
        warnings.warn(
            "no multi-offender clusters; working correlation set to zero",
            NoMultiOffenderClusters,
            stacklevel=2,
        )

    by_size = _BySize(clusters)
    d_x = clusters.x.shape[1]
    n_c = clusters.n_clusters
    coef_bound = 1e3 / max(1.0, float(np.max(np.abs(clusters.x))))
    gamma = first_stage.gamma_hat if first_stage is not None else (
        model.gamma_hat if model is not None else None
    )

    theta, _ = _plain_logit_mle(clusters.x, clusters.a, config)
    alpha = 0.0 if fix_alpha is None else float(fix_alpha)

    converged = False
    iterations = 0
    score = info = h = j_gamma = None
    for iterations in range(1, config.max_iter + 1):
        if fix_alpha is None and has_multi:
            resid = _pearson_residuals(clusters, theta, pi_cluster)
            new_alpha = _moment_alpha(clusters, resid)
        else:
            new_alpha = alpha
        score, info, h, j_gamma = _gee_terms(
            by_size, pi_cluster, clusters.z, gamma, theta, new_alpha, d_x
        )
        if np.linalg.cond(info) > 1e12:
            raise SingularDesign("GEE working information matrix is rank deficient")
        step = np.linalg.solve(info, score)
        new_theta = theta + step
        new_score, *_ = _gee_terms(
            by_size, pi_cluster, clusters.z, None, new_theta, new_alpha, d_x
        )
        halvings = 0
        while (
            np.max(np.abs(new_score)) > np.max(np.abs(score)) * (1.0 - 1e-4)
            and halvings < config.max_step_halvings
        ):
            step = step / 2.0
            new_theta = theta + step
            new_score, *_ = _gee_terms(
                by_size, pi_cluster, clusters.z, None, new_theta, new_alpha, d_x
            )
            halvings += 1

        theta_change = np.max(np.abs(step))
        alpha_change = abs(new_alpha - alpha)
        theta, alpha = new_theta, new_alpha

        q_all = expit(clusters.x @ theta)
        saturated = (
            q_all.min() < config.separation_prob_tol
            or q_all.max() > 1.0 - config.separation_prob_tol
        )
        if saturated and np.max(np.abs(theta)) > coef_bound:
            raise Separation("fitted probabilities saturated while coefficients diverge")
        if (
            theta_change < config.tol * max(1.0, np.max(np.abs(theta)))
            and alpha_change < config.tol
            and np.max(np.abs(new_score)) < config.score_tol
        ):
            converged = True
            break
    if not converged:
        raise NoConvergence(f"GEE did not converge in {config.max_iter} iterations")

    # polishing step at the final working correlation
    score, info, *_ = _gee_terms(by_size, pi_cluster, clusters.z, None, theta, alpha, d_x)
    theta = theta + np.linalg.solve(info, score)

    score, info, h, j_gamma = _gee_terms(
        by_size, pi_cluster, clusters.z, gamma, theta, alpha, d_x
    )
    xi = h.T @ h / n_c
    if first_stage is not None:
        kappa = n_c / first_stage.n_survey
        xi = xi + kappa * j_gamma @ first_stage.sigma_v @ j_gamma.T
    else:
        j_gamma = None
    info_inv = np.linalg.inv(info)
    sigma = info_inv @ xi @ info_inv
    sigma = 0.5 * (sigma + sigma.T)

    pi_off = np.repeat(pi_cluster, clusters.sizes)
    q_off = expit(clusters.x @ theta)
    n_above = int(np.sum(q_off / pi_off > 1.0))
    if n_above > 0.01 * clusters.n_offenders:
        warnings.warn(
            f"fitted mean exceeds the propensity on {n_above} of "
            f"{clusters.n_offenders} offender records",
            NonmonotoneFitWarning,
            stacklevel=2,
        )

    return GEEFit(
        theta_hat=theta,
        alpha_hat=alpha,
        feature_names=clusters.x_names,
        n_clusters=n_c,
        n_offenders=clusters.n_offenders,
        iterations=iterations,
        sigma_gee=sigma,
        j_theta=info,
        j_gamma=j_gamma,
        xi=xi,
        n_ratio_above_one=n_above,
        first_stage_omitted=first_stage is None,
    )
