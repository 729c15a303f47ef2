"""Clustered estimating equations with exchangeable working correlation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from undercount.design_glm import PiModel, design_covariance, fit_weighted_logit
from undercount.exceptions import (
    InvalidCorrelation,
    MissingFirstStageCovariance,
    NoMultiOffenderClusters,
    SchemaError,
)
from undercount.gee import (
    build_clusters,
    estimate_exchangeable_alpha,
    exchangeable_inverse,
    fit_arrest_gee,
)
from undercount.records import ReportedOffenses
from undercount.simulate import (
    clustered_scenario,
    generate_offenses,
    generate_survey,
    implied_exchangeable_alpha,
    single_offender_scenario,
    true_values,
)
from undercount.twostep import arrest_sandwich_covariance, fit_arrest_model


def oracle_model(spec, sigma=0.0):
    d = len(spec.gamma0)
    return PiModel(
        gamma_hat=np.asarray(spec.gamma0),
        feature_names=spec.z_names,
        n_survey=2000,
        sigma_v=np.full((d, d), sigma) + np.eye(d) * 1e-12,
    )


class TestExchangeableInverse:
    def test_size_one_is_identity_for_any_alpha(self):
        for alpha in (-5.0, 0.0, 0.99, 7.0):
            np.testing.assert_array_equal(exchangeable_inverse(1, alpha), np.ones((1, 1)))

    def test_alpha_zero_is_identity(self):
        np.testing.assert_allclose(exchangeable_inverse(4, 0.0), np.eye(4), atol=1e-15)

    def test_closed_form_for_k3_half(self):
        inv = exchangeable_inverse(3, 0.5)
        expected = np.full((3, 3), -0.5) + np.eye(3) * 2.0
        np.testing.assert_allclose(inv, expected, atol=1e-12)
        c = np.full((3, 3), 0.5) + np.eye(3) * 0.5
        np.testing.assert_allclose(c @ inv, np.eye(3), atol=1e-12)

    @pytest.mark.parametrize("size", range(2, 7))
    @pytest.mark.parametrize("alpha", [-0.2, 0.0, 0.3, 0.5, 0.9])
    def test_matches_numerical_inverse(self, size, alpha):
        if alpha <= -1.0 / (size - 1):
            with pytest.raises(InvalidCorrelation):
                exchangeable_inverse(size, alpha)
            return
        c = np.full((size, size), alpha) + np.eye(size) * (1.0 - alpha)
        np.testing.assert_allclose(exchangeable_inverse(size, alpha), np.linalg.inv(c), atol=1e-10)

    def test_out_of_range_raises(self):
        with pytest.raises(InvalidCorrelation):
            exchangeable_inverse(3, 1.0)
        with pytest.raises(InvalidCorrelation):
            exchangeable_inverse(3, -0.5)


@settings(max_examples=40, deadline=None)
@given(
    size=st.integers(min_value=2, max_value=6),
    alpha=st.floats(min_value=-0.15, max_value=0.95),
)
def test_inverse_property(size, alpha):
    c = np.full((size, size), alpha) + np.eye(size) * (1.0 - alpha)
    np.testing.assert_allclose(c @ exchangeable_inverse(size, alpha), np.eye(size), atol=1e-9)


class TestBuildClusters:
    def test_noncontiguous_ids_are_grouped(self):
        offenses = ReportedOffenses(
            incident_id=np.array([3, 1, 3, 2, 1]),
            x=np.column_stack([np.ones(5), np.arange(5.0)]),
            a=np.array([1.0, 0.0, 0.0, 1.0, 0.0]),
            x_names=("intercept", "u"),
            z=np.column_stack([np.ones(5), np.array([0.3, 0.1, 0.3, 0.2, 0.1])]),
            z_names=("intercept", "w"),
        )
        clusters = build_clusters(offenses)
        np.testing.assert_array_equal(clusters.incident_ids, [1, 2, 3])
        np.testing.assert_array_equal(clusters.sizes, [2, 1, 2])
        np.testing.assert_allclose(clusters.z[:, 1], [0.1, 0.2, 0.3])

    def test_conflicting_incident_covariates_rejected(self):
        offenses = ReportedOffenses(
            incident_id=np.array([1, 1]),
            x=np.ones((2, 1)),
            a=np.array([0.0, 1.0]),
            x_names=("intercept",),
            z=np.column_stack([np.ones(2), np.array([0.1, 0.9])]),
            z_names=("intercept", "w"),
        )
        with pytest.raises(SchemaError):
            build_clusters(offenses)


class TestAlphaEstimator:
    def test_all_singletons_falls_back_to_zero(self):
        spec = single_offender_scenario(n_offenses=500, seed=1)
        clusters = generate_offenses(spec).reported_clusters()
        with pytest.warns(NoMultiOffenderClusters):
            alpha = estimate_exchangeable_alpha(
                clusters, np.asarray(spec.theta0), oracle_model(spec)
            )
        assert alpha == 0.0

    def test_independent_outcomes_give_alpha_near_zero(self):
        spec = clustered_scenario(n_incidents=3000, latent_rho=0.0, seed=2)
        theta0 = np.asarray(spec.theta0)
        estimates = [
            estimate_exchangeable_alpha(
                generate_offenses(spec, rep).reported_clusters(), theta0, oracle_model(spec)
            )
            for rep in range(200)
        ]
        estimates = np.asarray(estimates)
        assert abs(estimates.mean()) < 3.0 * estimates.std(ddof=1) / np.sqrt(len(estimates))

    def test_latent_correlation_matches_enumerated_target(self):
        spec = clustered_scenario(n_incidents=3000, latent_rho=0.4, seed=3)
        alpha0 = implied_exchangeable_alpha(spec)
        theta0 = np.asarray(spec.theta0)
        estimates = np.asarray(
            [
                estimate_exchangeable_alpha(
                    generate_offenses(spec, rep).reported_clusters(), theta0, oracle_model(spec)
                )
                for rep in range(200)
            ]
        )
        se = estimates.std(ddof=1) / np.sqrt(len(estimates))
        assert abs(estimates.mean() - alpha0) < 3.0 * se

    def test_zero_latent_correlation_has_zero_target(self):
        spec = clustered_scenario(n_incidents=100, latent_rho=0.0, seed=4)
        assert implied_exchangeable_alpha(spec) == 0.0
        assert true_values(spec).alpha0 == 0.0


class TestFit:
    def test_singleton_clusters_reduce_to_twostep(self):
        spec = single_offender_scenario(n_offenses=6000, seed=5)
        survey = generate_survey(spec)
        model = design_covariance(fit_weighted_logit(survey), survey)
        reported = generate_offenses(spec).reported
        two = fit_arrest_model(reported, model)
        two = arrest_sandwich_covariance(two, reported, model)
        with pytest.warns(NoMultiOffenderClusters):
            gee = fit_arrest_gee(build_clusters(reported), model)
        np.testing.assert_allclose(gee.theta_hat, two.theta_hat, atol=1e-6)
        np.testing.assert_allclose(gee.sigma_gee, two.sigma, atol=1e-6 * np.max(np.abs(two.sigma)))
        assert gee.alpha_hat == 0.0

    def test_fixed_zero_alpha_is_working_independence(self):
        spec = clustered_scenario(n_incidents=4000, seed=6)
        survey = generate_survey(spec)
        model = design_covariance(fit_weighted_logit(survey), survey)
        clusters = generate_offenses(spec).reported_clusters()
        fixed = fit_arrest_gee(clusters, model, fix_alpha=0.0)
        assert fixed.alpha_hat == 0.0
        # independence solution: same estimating equation flattened to rows
        reported = generate_offenses(spec, 0).reported
        two = fit_arrest_model(reported, model)
        np.testing.assert_allclose(fixed.theta_hat, two.theta_hat, atol=1e-8)

    def test_estimated_alpha_agrees_with_independence_within_ses(self):
        spec = clustered_scenario(n_incidents=4000, seed=7)
        survey = generate_survey(spec)
        model = design_covariance(fit_weighted_logit(survey), survey)
        clusters = generate_offenses(spec).reported_clusters()
        free = fit_arrest_gee(clusters, model)
        fixed = fit_arrest_gee(clusters, model, fix_alpha=0.0)
        assert free.alpha_hat > 0.05
        joint_se = np.sqrt(free.se**2 + fixed.se**2)
        np.testing.assert_array_less(np.abs(free.theta_hat - fixed.theta_hat), 3.0 * joint_se)

    def test_sandwich_symmetric_psd(self):
        spec = clustered_scenario(n_incidents=3000, seed=8)
        survey = generate_survey(spec)
        model = design_covariance(fit_weighted_logit(survey), survey)
        gee = fit_arrest_gee(generate_offenses(spec).reported_clusters(), model)
        np.testing.assert_allclose(gee.sigma_gee, gee.sigma_gee.T, atol=1e-12)
        assert np.linalg.eigvalsh(gee.sigma_gee).min() > -1e-10
        assert np.all(np.diag(gee.sigma_gee) > 0)

    def test_invalid_fixed_alpha_rejected(self):
        spec = clustered_scenario(n_incidents=500, seed=9)
        survey = generate_survey(spec)
        model = design_covariance(fit_weighted_logit(survey), survey)
        clusters = generate_offenses(spec).reported_clusters()
        with pytest.raises(InvalidCorrelation):
            fit_arrest_gee(clusters, model, fix_alpha=-0.9)

    def test_external_propensities_flag_missing_first_stage(self):
        spec = clustered_scenario(n_incidents=1500, seed=10)
        draw = generate_offenses(spec)
        reported = draw.reported
        pi_off = np.repeat(draw.pi_incident, draw.sizes)[np.repeat(draw.reported_incident, draw.sizes)]
        external = ReportedOffenses(
            incident_id=reported.incident_id,
            x=reported.x,
            a=reported.a,
            x_names=reported.x_names,
            pi_external=pi_off,
        )
        with pytest.warns(MissingFirstStageCovariance):
            gee = fit_arrest_gee(build_clusters(external), None)
        assert gee.first_stage_omitted
        assert gee.j_gamma is None
