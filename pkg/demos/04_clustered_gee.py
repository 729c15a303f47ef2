"""Multi-offender incidents: GEE with an exchangeable working correlation.

Incidents with several offenders share a reporting decision and a latent
shock, so their outcomes are correlated. The GEE variant of the event model
keeps the coefficient estimates consistent and adjusts the covariance; the
single off-diagonal working-correlation parameter is estimated from
propensity-adjusted Pearson residuals.
"""

import numpy as np

from undercount import build_clusters, design_covariance, fit_arrest_gee, fit_weighted_logit
from undercount.report import render_fit_text
from undercount.simulate import (
    clustered_scenario,
    generate_offenses,
    generate_survey,
    implied_exchangeable_alpha,
)

spec = clustered_scenario(n_incidents=15_000, latent_rho=0.4, seed=4)
survey = generate_survey(spec)
model = design_covariance(fit_weighted_logit(survey), survey)

draw = generate_offenses(spec)
clusters = draw.reported_clusters()
sizes, counts = np.unique(clusters.sizes, return_counts=True)
print("reported incidents by cluster size:",
      {int(s): int(c) for s, c in zip(sizes, counts)})

fit = fit_arrest_gee(clusters, model)
print()
print(render_fit_text("Event model (GEE, exchangeable working correlation)", fit))

alpha0 = implied_exchangeable_alpha(spec)
print(f"working correlation: estimated {fit.alpha_hat:.4f}, "
      f"implied by the generator {alpha0:.4f}")

# consistency does not hinge on the working correlation
independence = fit_arrest_gee(clusters, model, fix_alpha=0.0)
gap = np.max(np.abs(independence.theta_hat - fit.theta_hat))
print(f"max coefficient change when alpha is pinned to zero: {gap:.4f}")
