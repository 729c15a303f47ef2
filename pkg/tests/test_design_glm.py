"""Survey-weighted logistic fit and its design-based covariance."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from undercount.design_glm import (
    DesignedSurvey,
    PiModel,
    design_covariance,
    fit_weighted_logit,
    predict_pi,
    weighted_score,
    weighted_score_jacobian,
)
from undercount.exceptions import FeatureMismatch, LonelyPSU, Separation, SingularDesign

RNG = np.random.default_rng(20240915)


def make_survey(n=60, d=2, seed=1, weights=None, stratum=None, psu=None):
    rng = np.random.default_rng(seed)
    z = np.column_stack([np.ones(n)] + [rng.uniform(-2, 2, n) for _ in range(d)])
    gamma = np.linspace(0.4, -0.6, d + 1)
    r = (rng.random(n) < expit(z @ gamma)).astype(float)
    if r.min() == r.max():  # force both classes
        r[0], r[1] = 0.0, 1.0
    return DesignedSurvey(
        z=z,
        r=r,
        weight=np.ones(n) if weights is None else weights,
        stratum=np.zeros(n, dtype=int) if stratum is None else stratum,
        psu=np.arange(n) if psu is None else psu,
        feature_names=("intercept",) + tuple(f"v{j}" for j in range(d)),
    )


def newton_oracle(z, r, w, iters=60):
    """Independent Newton-Raphson on the weighted log-likelihood."""
    gamma = np.zeros(z.shape[1])
    for _ in range(iters):
        p = 1.0 / (1.0 + np.exp(-(z @ gamma)))
        grad = z.T @ (w * (r - p))
        hess = -(z * (w * p * (1.0 - p))[:, None]).T @ z
        gamma = gamma - np.linalg.solve(hess, grad)
    return gamma


def linearization_oracle(survey, gamma):
    """Spreadsheet-style between-PSU linearization with explicit loops."""
    z, r, w = survey.z, survey.r, survey.weight
    n, d = z.shape
    p = expit(z @ gamma)
    info = np.zeros((d, d))
    for i in range(n):
        info += w[i] * p[i] * (1.0 - p[i]) * np.outer(z[i], z[i])
    v = np.zeros((d, d))
    for h in np.unique(survey.stratum):
        totals = []
        for c in np.unique(survey.psu[survey.stratum == h]):
            s = np.zeros(d)
            for i in range(n):
                if survey.stratum[i] == h and survey.psu[i] == c:
                    s += w[i] * (r[i] - p[i]) * z[i]
            totals.append(s)
        m = len(totals)
        tbar = sum(totals) / m
        for t in totals:
            v += m / (m - 1.0) * np.outer(t - tbar, t - tbar)
    inv = np.linalg.inv(info)
    return n * inv @ v @ inv


class TestFit:
    def test_intercept_only_symmetric(self):
        survey = DesignedSurvey(
            z=np.ones((4, 1)),
            r=np.array([1.0, 0.0, 1.0, 0.0]),
            weight=np.ones(4),
            stratum=np.zeros(4),
            psu=np.arange(4),
            feature_names=("intercept",),
        )
        model = fit_weighted_logit(survey)
        assert abs(model.gamma_hat[0]) < 1e-12

    def test_weight_rescaling_leaves_gamma_unchanged(self):
        survey = make_survey(seed=2)
        base = fit_weighted_logit(survey).gamma_hat
        scaled = DesignedSurvey(
            z=survey.z,
            r=survey.r,
            weight=survey.weight * 10.0,
            stratum=survey.stratum,
            psu=survey.psu,
            feature_names=survey.feature_names,
        )
        np.testing.assert_allclose(fit_weighted_logit(scaled).gamma_hat, base, atol=1e-10)

    def test_matches_newton_oracle_on_weighted_data(self):
        z = np.column_stack(
            [
                np.ones(8),
                [0.5, -1.0, 1.5, 0.2, -0.7, 1.1, -1.6, 0.9],
                [1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0],
            ]
        )
        r = np.array([1, 0, 0, 1, 1, 0, 1, 0], dtype=float)
        w = np.array([1.5, 0.7, 2.0, 1.0, 0.9, 1.2, 0.4, 1.8])
        survey = DesignedSurvey(
            z=z,
            r=r,
            weight=w,
            stratum=np.zeros(8),
            psu=np.arange(8),
            feature_names=("intercept", "v0", "v1"),
        )
        expected = newton_oracle(z, r, w)
        np.testing.assert_allclose(fit_weighted_logit(survey).gamma_hat, expected, atol=1e-8)

    def test_intercept_only_reproduces_weighted_mean(self):
        rng = np.random.default_rng(5)
        n = 30
        r = (rng.random(n) < 0.4).astype(float)
        r[:2] = [0.0, 1.0]
        w = rng.uniform(0.2, 3.0, n)
        survey = DesignedSurvey(
            z=np.ones((n, 1)),
            r=r,
            weight=w,
            stratum=np.zeros(n),
            psu=np.arange(n),
            feature_names=("intercept",),
        )
        model = fit_weighted_logit(survey)
        assert abs(expit(model.gamma_hat[0]) - np.sum(w * r) / np.sum(w)) < 1e-10

    def test_score_small_at_solution(self):
        survey = make_survey(seed=3, weights=np.linspace(0.5, 2.0, 60))
        model = fit_weighted_logit(survey)
        score = weighted_score(model.gamma_hat, survey)
        assert np.max(np.abs(score)) / survey.weight.sum() < 1e-8

    def test_all_identical_outcomes_is_separation(self):
        survey = make_survey(seed=4)
        bad = DesignedSurvey(
            z=survey.z,
            r=np.ones(survey.n),
            weight=survey.weight,
            stratum=survey.stratum,
            psu=survey.psu,
            feature_names=survey.feature_names,
        )
        with pytest.raises(Separation):
            fit_weighted_logit(bad)

    def test_duplicate_column_is_singular(self):
        survey = make_survey(seed=6)
        z = np.column_stack([survey.z, survey.z[:, 1]])
        bad = DesignedSurvey(
            z=z,
            r=survey.r,
            weight=survey.weight,
            stratum=survey.stratum,
            psu=survey.psu,
            feature_names=survey.feature_names + ("dup",),
        )
        with pytest.raises(SingularDesign):
            fit_weighted_logit(bad)

    def test_jacobian_matches_finite_differences(self):
        survey = make_survey(seed=7, weights=np.linspace(0.3, 1.7, 60))
        rng = np.random.default_rng(8)
        for _ in range(5):
            gamma = rng.uniform(-0.8, 0.8, 3)
            analytic = weighted_score_jacobian(gamma, survey)
            fd = np.zeros_like(analytic)
            eps = 1e-6
            for j in range(3):
                step = np.zeros(3)
                step[j] = eps
                fd[:, j] = (
                    weighted_score(gamma + step, survey) - weighted_score(gamma - step, survey)
                ) / (2 * eps)
            assert np.max(np.abs(analytic - fd)) / np.max(np.abs(analytic)) < 1e-6


class TestDesignCovariance:
    def test_iid_reduction_matches_classical_sandwich(self):
        survey = make_survey(n=80, seed=9)
        model = fit_weighted_logit(survey)
        model = design_covariance(model, survey)
        p = expit(survey.z @ model.gamma_hat)
        h = survey.z * (survey.r - p)[:, None]
        info = (survey.z * (p * (1 - p))[:, None]).T @ survey.z
        inv = np.linalg.inv(info)
        n = survey.n
        # iid sandwich with the same m/(m-1) correction the PSU estimator applies
        expected = n * (n / (n - 1.0)) * inv @ (h.T @ h) @ inv
        np.testing.assert_allclose(model.sigma_v, expected, atol=1e-8)

    def test_weight_rescaling_leaves_sigma_unchanged(self):
        stratum = np.repeat([0, 1], 30)
        psu = np.repeat(np.arange(12), 5)
        survey = make_survey(n=60, seed=10, stratum=stratum, psu=psu)
        model = design_covariance(fit_weighted_logit(survey), survey)
        scaled = DesignedSurvey(
            z=survey.z,
            r=survey.r,
            weight=survey.weight * 7.5,
            stratum=survey.stratum,
            psu=survey.psu,
            feature_names=survey.feature_names,
        )
        model_scaled = design_covariance(fit_weighted_logit(scaled), scaled)
        np.testing.assert_allclose(model_scaled.sigma_v, model.sigma_v, atol=1e-10)

    def test_two_strata_two_psu_matches_hand_oracle(self):
        stratum = np.repeat(["a", "b"], 10)
        psu = np.repeat([0, 1, 2, 3], 5)
        weights = np.concatenate([np.full(10, 1.4), np.full(10, 0.8)])
        survey = make_survey(n=20, seed=11, weights=weights, stratum=stratum, psu=psu)
        model = fit_weighted_logit(survey)
        model = design_covariance(model, survey)
        expected = linearization_oracle(survey, model.gamma_hat)
        np.testing.assert_allclose(model.sigma_v, expected, atol=1e-8)

    def test_lonely_psu_fails_by_default_and_centers_on_request(self):
        stratum = np.array([0] * 10 + [1] * 10)
        psu = np.array([0] * 5 + [1] * 5 + [2] * 10)
        survey = make_survey(n=20, seed=12, stratum=stratum, psu=psu)
        model = fit_weighted_logit(survey)
        with pytest.raises(LonelyPSU):
            design_covariance(model, survey)
        centered = design_covariance(model, survey, lonely_psu="center")
        assert np.all(np.isfinite(centered.sigma_v))
        assert np.all(np.diag(centered.sigma_v) >= 0)

    def test_superpopulation_term_only_grows_variance(self):
        stratum = np.repeat([0, 1], 30)
        psu = np.repeat(np.arange(12), 5)
        survey = make_survey(n=60, seed=13, stratum=stratum, psu=psu)
        base = design_covariance(fit_weighted_logit(survey), survey)
        model = PiModel(
            gamma_hat=base.gamma_hat,
            feature_names=base.feature_names,
            n_survey=base.n_survey,
            population_fraction=0.3,
        )
        with_super = design_covariance(model, survey)
        assert np.all(np.diag(with_super.sigma_v) >= np.diag(base.sigma_v) - 1e-12)

    def test_sigma_symmetric_psd(self):
        stratum = np.repeat([0, 1, 2], 20)
        psu = np.repeat(np.arange(12), 5)
        survey = make_survey(n=60, seed=14, stratum=stratum, psu=psu)
        model = design_covariance(fit_weighted_logit(survey), survey)
        np.testing.assert_allclose(model.sigma_v, model.sigma_v.T, atol=1e-12)
        assert np.linalg.eigvalsh(model.sigma_v).min() > -1e-10


class TestPredict:
    def test_zero_linear_predictor_gives_half(self):
        model = PiModel(gamma_hat=np.array([0.0]), feature_names=("intercept",), n_survey=4)
        assert predict_pi(model, np.array([1.0])) == pytest.approx(0.5)

    def test_log_three_gives_three_quarters(self):
        model = PiModel(gamma_hat=np.array([np.log(3.0)]), feature_names=("intercept",), n_survey=4)
        assert predict_pi(model, np.array([1.0])) == pytest.approx(0.75, abs=1e-12)

    def test_feature_mismatch(self):
        model = PiModel(
            gamma_hat=np.array([0.1, 0.2]), feature_names=("intercept", "v0"), n_survey=4
        )
        with pytest.raises(FeatureMismatch):
            predict_pi(model, np.array([1.0, 0.5, 0.3]))
        with pytest.raises(FeatureMismatch):
            predict_pi(model, np.array([1.0, 0.5]), feature_names=("intercept", "other"))

    def test_batch_prediction_matches_generator_probabilities(self):
        from undercount.simulate import generate_offenses, single_offender_scenario

        spec = single_offender_scenario(n_offenses=500, seed=21)
        draw = generate_offenses(spec)
        model = PiModel(
            gamma_hat=np.asarray(spec.gamma0), feature_names=spec.z_names, n_survey=100
        )
        np.testing.assert_allclose(
            predict_pi(model, draw.z_incident), draw.pi_incident, atol=1e-12
        )


@settings(max_examples=25, deadline=None)
@given(
    scale=st.floats(min_value=1e-3, max_value=1e3),
    seed=st.integers(min_value=0, max_value=10_000),
)
def test_weight_scaling_invariance_property(scale, seed):
    rng = np.random.default_rng(seed)
    survey = make_survey(n=50, seed=seed, weights=rng.uniform(0.5, 2.0, 50))
    scaled = DesignedSurvey(
        z=survey.z,
        r=survey.r,
        weight=survey.weight * scale,
        stratum=survey.stratum,
        psu=survey.psu,
        feature_names=survey.feature_names,
    )
    base = fit_weighted_logit(survey)
    other = fit_weighted_logit(scaled)
    np.testing.assert_allclose(other.gamma_hat, base.gamma_hat, atol=1e-10)
    sigma_base = design_covariance(base, survey).sigma_v
    sigma_other = design_covariance(other, scaled).sigma_v
    np.testing.assert_allclose(sigma_other, sigma_base, atol=1e-8 * np.max(np.abs(sigma_base)))
