"""Estimate how many events occurred from the reported subset alone.

Reported records underrepresent hard-to-report events. Weighting each record
by the inverse of its predicted reporting propensity recovers the latent
population total, the reporting rate, and the event rate, with standard
errors that propagate the first-stage uncertainty of the survey fit.
"""

from undercount import (
    design_covariance,
    estimate_population_total,
    estimate_rates,
    fit_weighted_logit,
    grouped_rates,
)
from undercount.report import render_rate_lines
from undercount.simulate import generate_offenses, generate_survey, single_offender_scenario, true_values

spec = single_offender_scenario(n_survey=2500, n_offenses=30_000, seed=2)
truth = true_values(spec)

survey = generate_survey(spec)
model = design_covariance(fit_weighted_logit(survey), survey)

draw = generate_offenses(spec)
reported = draw.reported
print(f"population: {spec.n_offenses} events, reported subset: {reported.n}")
print(f"true reporting rate {truth.pi_star:.4f}, true event rate {truth.q_star:.4f}")
print()

total = estimate_population_total(reported, model)
pi_star, q_star = estimate_rates(reported, model)
print(render_rate_lines("population total", total))
print(render_rate_lines("reporting rate", pi_star))
print(render_rate_lines("event rate", q_star))
print(f"kappa (records per survey observation): {total.kappa:.3f}")
print()

# per-group estimates: group labels ride along with the records
groups = (reported.x[:, 1] > 0).astype(int)
print("grouped by the first covariate (0/1):")
for label, g in grouped_rates(reported, model, groups).items():
    print(f"  group {label}: n={g.n_records:>6}  " + render_rate_lines("total", g.total))
