"""Synthetic data generation and Monte Carlo validation harness.

Generates stratified PSU-clustered surveys with a known reporting model and
offense populations with known outcome parameters, so that every estimator in
the package can be checked against ground truth: bias, RMSE, and confidence
interval coverage. Covariates are discrete with bounded support, which makes
the implied population rates exact finite sums rather than approximations.

Arrests are drawn so that the unconditional event probability given the
covariates equals the outcome model exactly: an incident reports with
probability pi(z), and a reported offender is arrested with probability
q(x)/pi(z). Within-incident dependence uses a shared Gaussian factor, and the
implied exchangeable correlation of the adjusted residuals is computed by
quadrature over that factor.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, ndtr, ndtri

from .design_glm import DesignedSurvey, FitConfig, design_covariance, fit_weighted_logit
from .exceptions import MissingFirstStageCovariance, SpecInvalid, UndercountError
from .gee import Clusters, build_clusters, fit_arrest_gee
from .records import ReportedOffenses
from .reweight import Z975, estimate_population_total, estimate_rates
from .twostep import arrest_sandwich_covariance, fit_arrest_model

__all__ = [
    "ScenarioSpec",
    "SimTruth",
    "OffenseDraw",
    "generate_survey",
    "generate_offenses",
    "implied_exchangeable_alpha",
    "true_values",
    "run_coverage",
    "CoverageStudy",
    "ParamSummary",
    "single_offender_scenario",
    "clustered_scenario",
    "pi_one_scenario",
    "injury_scenario",
    "SCENARIOS",
]

_SURVEY_STREAM = 11
_OFFENSE_STREAM = 22


@dataclass(frozen=True)
class ScenarioSpec:
    """Complete description of one synthetic world.

    The incident covariate vector is (intercept, one column per entry of
    ``z_levels``); the offender covariate vector appends one column per entry
    of ``x_extra_levels``, so the incident covariates are a deterministic
    coarsening of the offender covariates by construction.
    """

    name: str
    gamma0: tuple[float, ...]
    theta0: tuple[float, ...]
    z_levels: tuple[tuple[float, ...], ...]
    survey_level_probs: tuple[tuple[tuple[float, ...], ...], ...]
    offense_level_probs: tuple[tuple[float, ...], ...]
    x_extra_levels: tuple[tuple[float, ...], ...]
    x_extra_probs: tuple[tuple[float, ...], ...]
    stratum_shares: tuple[float, ...]
    stratum_sample_shares: tuple[float, ...]
    n_survey: int
    psu_size: int
    n_offenses: int
    psu_tilt_feature: int | None = None
    psu_tilt: float = 0.0
    cluster_size_probs: tuple[tuple[int, float], ...] | None = None
    latent_rho: float = 0.0
    pi_one: bool = False
    positivity_floor: float = 0.01
    covariate_bound: float = 50.0
    seed: int = 0

    @property
    def d_z(self) -> int:
        return 1 + len(self.z_levels)

    @property
    def d_x(self) -> int:
        return 1 + len(self.z_levels) + len(self.x_extra_levels)

    @property
    def z_names(self) -> tuple[str, ...]:
        return ("intercept",) + tuple(f"z{j + 1}" for j in range(len(self.z_levels)))

    @property
    def x_names(self) -> tuple[str, ...]:
        extras = tuple(f"x{j + 1 + len(self.z_levels)}" for j in range(len(self.x_extra_levels)))
        return self.z_names + extras


def _check_probs(probs, what: str) -> None:
    arr = np.asarray(probs, dtype=float)
    if np.any(arr < 0) or abs(arr.sum() - 1.0) > 1e-9:
        raise SpecInvalid(f"{what} must be nonnegative and sum to one")


def _z_support(spec: ScenarioSpec) -> tuple[np.ndarray, np.ndarray]:
    """All incident covariate combinations with their offense-side probabilities."""
    combos = list(itertools.product(*spec.z_levels))
    z = np.column_stack([np.ones(len(combos)), np.asarray(combos, dtype=float)])
    probs = np.ones(len(combos))
    for i, combo in enumerate(itertools.product(*[range(len(l)) for l in spec.z_levels])):
        probs[i] = np.prod([spec.offense_level_probs[j][k] for j, k in enumerate(combo)])
    return z, probs


def _extra_support(spec: ScenarioSpec) -> tuple[np.ndarray, np.ndarray]:
    if not spec.x_extra_levels:
        return np.zeros((1, 0)), np.ones(1)
    combos = list(itertools.product(*spec.x_extra_levels))
    extras = np.asarray(combos, dtype=float)
    probs = np.ones(len(combos))
    for i, combo in enumerate(itertools.product(*[range(len(l)) for l in spec.x_extra_levels])):
        probs[i] = np.prod([spec.x_extra_probs[j][k] for j, k in enumerate(combo)])
    return extras, probs


def validate_spec(spec: ScenarioSpec) -> None:
    """Check the scenario's internal constraints; raise :class:`SpecInvalid`."""
    if len(spec.gamma0) != spec.d_z or len(spec.theta0) != spec.d_x:
        raise SpecInvalid("parameter dimensions disagree with the covariate layout")
    _check_probs(spec.stratum_shares, "stratum shares")
    _check_probs(spec.stratum_sample_shares, "stratum sample shares")
    if len(spec.stratum_shares) != len(spec.stratum_sample_shares) or len(
        spec.stratum_shares
    ) != len(spec.survey_level_probs):
        raise SpecInvalid("stratum shares, sample shares, and level probs must align")
    for h, per_stratum in enumerate(spec.survey_level_probs):
        if len(per_stratum) != len(spec.z_levels):
            raise SpecInvalid(f"stratum {h} must give probabilities for every feature")
        for j, probs in enumerate(per_stratum):
            if len(probs) != len(spec.z_levels[j]):
                raise SpecInvalid(f"stratum {h}, feature {j}: probability arity mismatch")
            _check_probs(probs, f"stratum {h} feature {j} probabilities")
    for j, probs in enumerate(spec.offense_level_probs):
        if len(probs) != len(spec.z_levels[j]):
            raise SpecInvalid(f"offense feature {j}: probability arity mismatch")
        _check_probs(probs, f"offense feature {j} probabilities")
    for j, probs in enumerate(spec.x_extra_probs):
        if len(probs) != len(spec.x_extra_levels[j]):
            raise SpecInvalid(f"offender feature {j}: probability arity mismatch")
        _check_probs(probs, f"offender feature {j} probabilities")
    levels = [l for feat in (*spec.z_levels, *spec.x_extra_levels) for l in feat]
    if np.max(np.abs(levels)) >= spec.covariate_bound:
        raise SpecInvalid("covariate levels exceed the configured bound")
    if spec.psu_tilt_feature is not None:
        if tuple(spec.z_levels[spec.psu_tilt_feature]) != (0.0, 1.0):
            raise SpecInvalid("the PSU-tilted feature must be binary with levels (0, 1)")
    if spec.cluster_size_probs is not None:
        sizes = [k for k, _ in spec.cluster_size_probs]
        if min(sizes) < 1:
            raise SpecInvalid("cluster sizes must be at least one")
        _check_probs([p for _, p in spec.cluster_size_probs], "cluster size probabilities")
    if not 0.0 <= spec.latent_rho < 1.0:
        raise SpecInvalid("latent correlation must lie in [0, 1)")

    if not spec.pi_one:
        z, _ = _z_support(spec)
        pi = expit(z @ np.asarray(spec.gamma0))
        if pi.min() < spec.positivity_floor:
            raise SpecInvalid(
                f"implied reporting propensity {pi.min():.4f} below the floor "
                f"{spec.positivity_floor}"
            )
        extras, _ = _extra_support(spec)
        for zi, pii in zip(z, pi):
            x = np.hstack([np.tile(zi, (extras.shape[0], 1)), extras])
            q = expit(x @ np.asarray(spec.theta0))
            if np.any(q > pii + 1e-12):
                raise SpecInvalid(
                    "outcome probability exceeds the reporting propensity on part of "
                    "the support; the arrest mechanism would be ill-defined"
                )


@dataclass(frozen=True)
class SimTruth:
    """Ground-truth values implied by a scenario."""

    gamma0: np.ndarray
    theta0: np.ndarray
    n_offenses: int
    pi_star: float
    q_star: float
    alpha0: float | None = None


def true_values(spec: ScenarioSpec) -> SimTruth:
    """Exact population rates implied by the scenario (finite-sum enumeration)."""
    validate_spec(spec)
    gamma0 = np.asarray(spec.gamma0, dtype=float)
    theta0 = np.asarray(spec.theta0, dtype=float)
    z, pz = _z_support(spec)
    pi = np.ones(z.shape[0]) if spec.pi_one else expit(z @ gamma0)
    pi_star = float(pz @ pi)
    extras, px = _extra_support(spec)
    q_star = 0.0
    for zi, pzi in zip(z, pz):
        x = np.hstack([np.tile(zi, (extras.shape[0], 1)), extras])
        q_star += pzi * float(px @ expit(x @ theta0))
    alpha0 = None
    if spec.cluster_size_probs is not None:
        alpha0 = implied_exchangeable_alpha(spec)
    return SimTruth(
        gamma0=gamma0,
        theta0=theta0,
        n_offenses=spec.n_offenses,
        pi_star=pi_star,
        q_star=q_star,
        alpha0=alpha0,
    )


def implied_exchangeable_alpha(spec: ScenarioSpec, gh_nodes: int = 80) -> float:
    """Implied target of the pairwise residual-moment correlation estimator.

    Enumerates the joint outcome distribution of an offender pair within a
    reported incident: given the shared Gaussian factor, arrests are
    conditionally independent with marginals q(x)/pi(z), so the pairwise
    joint probability is a one-dimensional integral over the factor
    (Gauss-Hermite quadrature). The result is the expectation of the
    pairwise product of adjusted Pearson residuals over reported incidents,
    which is exactly what the moment estimator normalizes to.
    """
    if spec.cluster_size_probs is None:
        raise SpecInvalid("scenario has no cluster-size distribution")
    if spec.latent_rho == 0.0:
        return 0.0
    gamma0 = np.asarray(spec.gamma0, dtype=float)
    theta0 = np.asarray(spec.theta0, dtype=float)
    nodes, weights = np.polynomial.hermite.hermgauss(gh_nodes)
    u = np.sqrt(2.0) * nodes
    w = weights / np.sqrt(np.pi)

    z, pz = _z_support(spec)
    pi = np.ones(z.shape[0]) if spec.pi_one else expit(z @ gamma0)
    extras, px = _extra_support(spec)
    rho = spec.latent_rho
    scale = np.sqrt(1.0 - rho)

    num = 0.0
    den = 0.0
    for zi, pzi, pii in zip(z, pz, pi):
        x = np.hstack([np.tile(zi, (extras.shape[0], 1)), extras])
        q = expit(x @ theta0)
        p_cond = q / pii
        t = ndtri(p_cond)
        # conditional success probability per combo and factor node
        cond = ndtr((t[:, None] - np.sqrt(rho) * u[None, :]) / scale)
        p11 = (cond * w[None, :]) @ cond.T
        e_pair = (p11 - np.outer(p_cond, p_cond)) / np.outer(
            np.sqrt(q * (1.0 - q)), np.sqrt(q * (1.0 - q))
        )
        weight = pzi * pii  # reported incidents overrepresent high-propensity z
        num += weight * float(px @ e_pair @ px)
        den += weight
    return num / den


def generate_survey(spec: ScenarioSpec, rep: int = 0) -> DesignedSurvey:
    """One stratified, PSU-clustered survey draw with known reporting model.

    Within each stratum a fixed number of PSUs is drawn; units of a PSU share
    a PSU-level tilt on one binary covariate, which induces within-PSU
    correlation without touching the reporting model. Weights are the
    stratum population share over the stratum sample share, so equal
    sampling rates produce equal weights.
    """
    validate_spec(spec)
    rng = np.random.default_rng(np.random.SeedSequence((spec.seed, _SURVEY_STREAM, rep)))
    gamma0 = np.asarray(spec.gamma0, dtype=float)
    n_strata = len(spec.stratum_shares)

    z_parts, r_parts, w_parts, stratum_parts, psu_parts = [], [], [], [], []
    planned = [
        max(2, int(round(s * spec.n_survey / spec.psu_size))) for s in spec.stratum_sample_shares
    ]
    total_n = sum(m * spec.psu_size for m in planned)
    for h in range(n_strata):
        m_h = planned[h]
        n_h = m_h * spec.psu_size
        cols = []
        for j, levels in enumerate(spec.z_levels):
            probs = np.asarray(spec.survey_level_probs[h][j], dtype=float)
            if spec.psu_tilt_feature == j:
                base = probs[1]
                p_psu = np.clip(
                    base + rng.uniform(-spec.psu_tilt, spec.psu_tilt, size=m_h), 0.05, 0.95
                )
                draws = (rng.random(n_h) < np.repeat(p_psu, spec.psu_size)).astype(float)
                cols.append(draws)
            else:
                cols.append(rng.choice(np.asarray(levels, dtype=float), size=n_h, p=probs))
        z_h = np.column_stack([np.ones(n_h)] + cols)
        pi_h = np.ones(n_h) if spec.pi_one else expit(z_h @ gamma0)
        r_h = (rng.random(n_h) < pi_h).astype(float)
        z_parts.append(z_h)
        r_parts.append(r_h)
        w_parts.append(np.full(n_h, spec.stratum_shares[h] * total_n / n_h))
        stratum_parts.append(np.full(n_h, f"s{h}"))
        psu_parts.append(np.repeat([f"s{h}-p{c}" for c in range(m_h)], spec.psu_size))

    return DesignedSurvey(
        z=np.vstack(z_parts),
        r=np.concatenate(r_parts),
        weight=np.concatenate(w_parts),
        stratum=np.concatenate(stratum_parts),
        psu=np.concatenate(psu_parts),
        feature_names=spec.z_names,
    )


@dataclass(frozen=True)
class OffenseDraw:
    """A full offense population plus its reported subset."""

    spec: ScenarioSpec
    z_incident: np.ndarray
    x: np.ndarray
    a: np.ndarray
    reported_incident: np.ndarray
    sizes: np.ndarray
    pi_incident: np.ndarray
    reported: ReportedOffenses

    @property
    def n_incidents(self) -> int:
        return self.sizes.size

    @property
    def n_reported(self) -> int:
        return int(self.reported_incident.sum())

    def reported_clusters(self) -> Clusters:
        return build_clusters(self.reported)


def generate_offenses(spec: ScenarioSpec, rep: int = 0) -> OffenseDraw:
    """One offense population draw; arrests exist only on reported incidents."""
    validate_spec(spec)
    rng = np.random.default_rng(np.random.SeedSequence((spec.seed, _OFFENSE_STREAM, rep)))
    gamma0 = np.asarray(spec.gamma0, dtype=float)
    theta0 = np.asarray(spec.theta0, dtype=float)
    n_inc = spec.n_offenses

    if spec.cluster_size_probs is not None:
        size_values = np.asarray([k for k, _ in spec.cluster_size_probs])
        size_probs = np.asarray([p for _, p in spec.cluster_size_probs])
        sizes = rng.choice(size_values, size=n_inc, p=size_probs)
    else:
        sizes = np.ones(n_inc, dtype=np.int64)
    n_off = int(sizes.sum())

    z_cols = [
        rng.choice(np.asarray(levels, dtype=float), size=n_inc, p=np.asarray(probs, dtype=float))
        for levels, probs in zip(spec.z_levels, spec.offense_level_probs)
    ]
    z_inc = np.column_stack([np.ones(n_inc)] + z_cols)
    extra_cols = [
        rng.choice(np.asarray(levels, dtype=float), size=n_off, p=np.asarray(probs, dtype=float))
        for levels, probs in zip(spec.x_extra_levels, spec.x_extra_probs)
    ]
    x = np.repeat(z_inc, sizes, axis=0)
    if extra_cols:
        x = np.hstack([x, np.column_stack(extra_cols)])

    pi_inc = np.ones(n_inc) if spec.pi_one else expit(z_inc @ gamma0)
    r_inc = np.ones(n_inc, dtype=bool) if spec.pi_one else rng.random(n_inc) < pi_inc

    p_arrest = expit(x @ theta0) / np.repeat(pi_inc, sizes)
    if p_arrest.max() > 1.0 + 1e-9:
        raise SpecInvalid("conditional arrest probability above one; adjust the scenario")
    p_arrest = np.minimum(p_arrest, 1.0)
    # shared-factor Gaussian copula; rho = 0 gives independent uniforms
    factor = rng.standard_normal(n_inc)
    noise = rng.standard_normal(n_off)
    latent = np.sqrt(spec.latent_rho) * np.repeat(factor, sizes) + np.sqrt(
        1.0 - spec.latent_rho
    ) * noise
    a = (ndtr(latent) <= p_arrest) & np.repeat(r_inc, sizes)
    a = a.astype(float)

    mask_off = np.repeat(r_inc, sizes)
    incident_index = np.repeat(np.arange(n_inc), sizes)
    reported = ReportedOffenses(
        incident_id=incident_index[mask_off],
        x=x[mask_off],
        a=a[mask_off],
        x_names=spec.x_names,
        z=np.repeat(z_inc, sizes, axis=0)[mask_off],
        z_names=spec.z_names,
    )
    return OffenseDraw(
        spec=spec,
        z_incident=z_inc,
        x=x,
        a=a,
        reported_incident=r_inc,
        sizes=sizes,
        pi_incident=pi_inc,
        reported=reported,
    )


@dataclass
class _ParamTrack:
    truth: float
    estimates: list[float] = field(default_factory=list)
    ses: list[float] = field(default_factory=list)
    covers: list[bool] = field(default_factory=list)
    errors: list[float] = field(default_factory=list)

    def add(
        self,
        est: float,
        se: float,
        lo: float | None = None,
        hi: float | None = None,
        truth: float | None = None,
    ) -> None:
        # per-replication truth overrides the nominal one (realized totals)
        target = self.truth if truth is None else truth
        self.estimates.append(est)
        self.ses.append(se)
        self.errors.append(est - target)
        if lo is not None and hi is not None:
            self.covers.append(lo <= target <= hi)


@dataclass(frozen=True)
class ParamSummary:
    name: str
    truth: float
    mean: float
    bias: float
    rmse: float
    coverage: float
    coverage_se: float
    n_used: int


@dataclass
class CoverageStudy:
    """Per-parameter Monte Carlo record of estimates, SEs, and CI coverage."""

    spec: ScenarioSpec
    reps: int
    params: dict[str, _ParamTrack]
    failures: dict[str, int]

    def estimates(self, name: str) -> np.ndarray:
        return np.asarray(self.params[name].estimates)

    def coverage(self, name: str) -> float:
        covers = self.params[name].covers
        return float(np.mean(covers)) if covers else float("nan")

    def errors(self, name: str) -> np.ndarray:
        return np.asarray(self.params[name].errors)

    def summary(self) -> list[ParamSummary]:
        rows = []
        for name, track in self.params.items():
            est = np.asarray(track.estimates)
            err = np.asarray(track.errors)
            cov = float(np.mean(track.covers)) if track.covers else float("nan")
            rows.append(
                ParamSummary(
                    name=name,
                    truth=track.truth,
                    mean=float(est.mean()) if est.size else float("nan"),
                    bias=float(err.mean()) if err.size else float("nan"),
                    rmse=float(np.sqrt(np.mean(err**2))) if err.size else float("nan"),
                    coverage=cov,
                    coverage_se=float(np.sqrt(cov * (1.0 - cov) / len(track.covers)))
                    if track.covers
                    else float("nan"),
                    n_used=len(track.estimates),
                )
            )
        return rows

    def to_frame(self):
        import pandas as pd

        return pd.DataFrame([vars(row) for row in self.summary()])


def run_coverage(
    spec: ScenarioSpec,
    reps: int = 500,
    estimators: tuple[str, ...] | None = None,
    fit_config: FitConfig = FitConfig(),
) -> CoverageStudy:
    """Regenerate data and rerun the full pipeline ``reps`` times.

    ``estimators`` selects among "reporting", "total", "rates", "arrest" and
    "gee"; by default everything applicable to the scenario runs. Estimator
    failures are tallied per stage and do not abort the study.
    """
    if reps < 1:
        raise ValueError("reps must be positive")
    truth = true_values(spec)
    if estimators is None:
        estimators = ("reporting", "total", "rates", "arrest")
        if spec.cluster_size_probs is not None:
            estimators = ("reporting", "total", "rates", "gee")
    if spec.pi_one:
        # no reporting model exists when everything is reported
        estimators = tuple(e for e in estimators if e != "reporting")
    gamma_names = [f"gamma_{name}" for name in spec.z_names]
    theta_names = [f"theta_{name}" for name in spec.x_names]
    gee_names = [f"gee_{name}" for name in spec.x_names]

    mean_size = 1.0
    if spec.cluster_size_probs is not None:
        mean_size = float(sum(k * p for k, p in spec.cluster_size_probs))

    params: dict[str, _ParamTrack] = {}
    if "reporting" in estimators:
        for j, name in enumerate(gamma_names):
            params[name] = _ParamTrack(truth=float(truth.gamma0[j]))
    if "total" in estimators:
        # the HT total counts reported rows, i.e. offenders; coverage is
        # checked against the realized offender total of each replication
        params["N"] = _ParamTrack(truth=float(spec.n_offenses) * mean_size)
    if "rates" in estimators:
        params["pi_star"] = _ParamTrack(truth=truth.pi_star)
        params["q_star"] = _ParamTrack(truth=truth.q_star)
    if "arrest" in estimators:
        for j, name in enumerate(theta_names):
            params[name] = _ParamTrack(truth=float(truth.theta0[j]))
    if "gee" in estimators:
        for j, name in enumerate(gee_names):
            params[name] = _ParamTrack(truth=float(truth.theta0[j]))
        params["gee_alpha"] = _ParamTrack(truth=truth.alpha0 if truth.alpha0 is not None else 0.0)

    failures = {stage: 0 for stage in estimators}
    floor = spec.positivity_floor

    with warnings.catch_warnings():
        if spec.pi_one:
            warnings.simplefilter("ignore", MissingFirstStageCovariance)
        _run_replications(
            spec, reps, estimators, fit_config, params, failures, gamma_names,
            theta_names, gee_names, floor,
        )

    return CoverageStudy(spec=spec, reps=reps, params=params, failures=failures)


def _run_replications(
    spec, reps, estimators, fit_config, params, failures, gamma_names, theta_names,
    gee_names, floor,
):
    for rep in range(reps):
        model = None
        if not spec.pi_one:
            try:
                survey = generate_survey(spec, rep)
                model = fit_weighted_logit(survey, fit_config)
                model = design_covariance(model, survey)
            except UndercountError:
                for stage in estimators:
                    failures[stage] += 1
                continue
            if "reporting" in estimators:
                se = np.sqrt(np.diag(model.sigma_v) / model.n_survey)
                for j, name in enumerate(gamma_names):
                    est = float(model.gamma_hat[j])
                    params[name].add(est, float(se[j]), est - Z975 * se[j], est + Z975 * se[j])

        draw = generate_offenses(spec, rep)
        reported = draw.reported
        if spec.pi_one:
            reported = ReportedOffenses(
                incident_id=reported.incident_id,
                x=reported.x,
                a=reported.a,
                x_names=reported.x_names,
                z=reported.z,
                z_names=reported.z_names,
                pi_external=np.ones(reported.n),
            )
        if "total" in estimators:
            try:
                total = estimate_population_total(reported, model, floor)
                params["N"].add(
                    total.value,
                    total.se,
                    total.ci_low,
                    total.ci_high,
                    truth=float(draw.sizes.sum()),
                )
            except UndercountError:
                failures["total"] += 1
        if "rates" in estimators:
            try:
                pi_star, q_star = estimate_rates(reported, model, floor)
                params["pi_star"].add(pi_star.value, pi_star.se, pi_star.ci_low, pi_star.ci_high)
                params["q_star"].add(q_star.value, q_star.se, q_star.ci_low, q_star.ci_high)
            except UndercountError:
                failures["rates"] += 1
        if "arrest" in estimators:
            try:
                fit = fit_arrest_model(reported, model, fit_config, floor)
                fit = arrest_sandwich_covariance(fit, reported, model, floor)
                se = fit.se
                for j, name in enumerate(theta_names):
                    est = float(fit.theta_hat[j])
                    params[name].add(est, float(se[j]), est - Z975 * se[j], est + Z975 * se[j])
            except UndercountError:
                failures["arrest"] += 1
        if "gee" in estimators:
            try:
                clusters = build_clusters(reported)
                gee = fit_arrest_gee(clusters, model, fit_config, floor)
                se = gee.se
                for j, name in enumerate(gee_names):
                    est = float(gee.theta_hat[j])
                    params[name].add(est, float(se[j]), est - Z975 * se[j], est + Z975 * se[j])
                params["gee_alpha"].add(gee.alpha_hat, 0.0)
            except UndercountError:
                failures["gee"] += 1


def single_offender_scenario(
    n_survey: int = 2000, n_offenses: int = 50_000, seed: int = 0
) -> ScenarioSpec:
    """Baseline world: four incident covariates, six offender covariates."""
    return ScenarioSpec(
        name="single",
        gamma0=(0.3, 0.6, -0.4, 0.5),
        theta0=(-1.2, 0.5, -0.3, 0.4, 0.6, -0.5),
        z_levels=((0.0, 1.0), (-1.0, 0.0, 1.0), (0.0, 1.0)),
        survey_level_probs=(
            ((0.5, 0.5), (0.3, 0.4, 0.3), (0.5, 0.5)),
            ((0.6, 0.4), (0.2, 0.5, 0.3), (0.5, 0.5)),
            ((0.4, 0.6), (0.4, 0.3, 0.3), (0.5, 0.5)),
            ((0.5, 0.5), (0.3, 0.3, 0.4), (0.5, 0.5)),
        ),
        offense_level_probs=((0.35, 0.65), (0.25, 0.4, 0.35), (0.45, 0.55)),
        x_extra_levels=((0.0, 1.0), (-1.0, 1.0)),
        x_extra_probs=((0.5, 0.5), (0.6, 0.4)),
        stratum_shares=(0.4, 0.3, 0.2, 0.1),
        stratum_sample_shares=(0.3, 0.3, 0.2, 0.2),
        n_survey=n_survey,
        psu_size=20,
        psu_tilt_feature=2,
        psu_tilt=0.2,
        n_offenses=n_offenses,
        seed=seed,
    )


def clustered_scenario(
    n_incidents: int = 12_000,
    n_survey: int = 2000,
    latent_rho: float = 0.4,
    seed: int = 0,
) -> ScenarioSpec:
    """Multi-offender world with exchangeable within-incident dependence."""
    base = single_offender_scenario(n_survey=n_survey, n_offenses=n_incidents, seed=seed)
    return replace(
        base,
        name="clustered",
        x_extra_probs=((0.5, 0.5), (0.5, 0.5)),
        cluster_size_probs=((1, 0.5), (2, 0.25), (3, 0.15), (4, 0.1)),
        latent_rho=latent_rho,
    )


def pi_one_scenario(n_offenses: int = 20_000, seed: int = 0) -> ScenarioSpec:
    """Everything reported: the corrections must reduce to the classical fits."""
    base = single_offender_scenario(n_offenses=n_offenses, seed=seed)
    return replace(base, name="pi-one", pi_one=True)


def injury_scenario(n_offenses: int = 40_000, n_survey: int = 4000, seed: int = 0) -> ScenarioSpec:
    """Reporting rises steeply with the first covariate (an injury indicator)."""
    return ScenarioSpec(
        name="injury",
        gamma0=(-0.2, 1.2, 0.3),
        theta0=(-1.0, 0.8, 0.3, 0.4),
        z_levels=((0.0, 1.0), (0.0, 1.0)),
        survey_level_probs=(
            ((0.6, 0.4), (0.5, 0.5)),
            ((0.5, 0.5), (0.4, 0.6)),
        ),
        offense_level_probs=((0.55, 0.45), (0.5, 0.5)),
        x_extra_levels=((0.0, 1.0),),
        x_extra_probs=((0.5, 0.5),),
        stratum_shares=(0.6, 0.4),
        stratum_sample_shares=(0.5, 0.5),
        n_survey=n_survey,
        psu_size=20,
        psu_tilt_feature=None,
        n_offenses=n_offenses,
        seed=seed,
    )


SCENARIOS = {
    "single": single_offender_scenario,
    "clustered": clustered_scenario,
    "pi-one": pi_one_scenario,
    "injury": injury_scenario,
}
