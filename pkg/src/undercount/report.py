"""Plain-text and CSV rendering of fitted models and rate estimates.

Text reports use six significant digits; CSV files carry full precision.
All output is deterministic: no timestamps, fixed row order, shortest
round-trip float formatting.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .reweight import GroupRates, RateEstimate

__all__ = [
    "SIGNIFICANCE_LEGEND",
    "WaldTable",
    "significance_code",
    "fit_table_rows",
    "render_fit_text",
    "render_rate_lines",
    "rate_table_rows",
    "grouped_rate_rows",
    "summary_csv_rows",
    "write_csv",
]

SIGNIFICANCE_LEGEND = "Significance codes: p<0.001 '***', p<0.01 '**', p<0.05 '*', p<0.1 '.'"

_THRESHOLDS = ((0.001, "***"), (0.01, "**"), (0.05, "*"), (0.1, "."))


class WaldTable:
    """Adapter giving any (names, estimates, sigma, n) the coefficient-table API."""

    def __init__(self, feature_names, estimates, sigma, n):
        self.feature_names = tuple(feature_names)
        self.theta_hat = np.asarray(estimates, dtype=float)
        self.sigma = np.asarray(sigma, dtype=float)
        self.n = int(n)

    @property
    def se(self):
        return np.sqrt(np.diag(self.sigma) / self.n)

    @property
    def odds_ratios(self):
        return np.exp(self.theta_hat)

    @property
    def odds_ratio_se(self):
        return self.odds_ratios * self.se

    @property
    def p_values(self):
        from scipy.stats import norm

        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.abs(self.theta_hat) / self.se
        return 2.0 * norm.sf(t)


def significance_code(p: float) -> str:
    for cut, code in _THRESHOLDS:
        if p < cut:
            return code
    return ""


def _full(x: float) -> str:
    return format(float(x), ".17g")


def _sig(x: float) -> str:
    return format(float(x), ".6g")


def fit_table_rows(fit) -> list[dict[str, str]]:
    """Coefficient table rows for an ArrestFit/GEEFit-like object."""
    se = fit.se
    or_se = fit.odds_ratio_se
    pvals = fit.p_values
    rows = []
    for j, name in enumerate(fit.feature_names):
        rows.append(
            {
                "name": name,
                "estimate": _full(fit.theta_hat[j]),
                "odds_ratio": _full(fit.odds_ratios[j]),
                "se": _full(se[j]),
                "odds_ratio_se": _full(or_se[j]),
                "p_value": _full(pvals[j]),
                "signif": significance_code(float(pvals[j])),
            }
        )
    return rows


def render_fit_text(title: str, fit) -> str:
    """Human-readable coefficient table with significance codes."""
    se = fit.se
    or_se = fit.odds_ratio_se
    pvals = fit.p_values
    width = max(len(name) for name in fit.feature_names)
    lines = [title, "=" * len(title)]
    header = (
        f"{'coefficient':<{width}}  {'estimate':>12}  {'odds_ratio':>12}  "
        f"{'se':>12}  {'or_se':>12}  {'p_value':>12}  sig"
    )
    lines.append(header)
    for j, name in enumerate(fit.feature_names):
        lines.append(
            f"{name:<{width}}  {_sig(fit.theta_hat[j]):>12}  {_sig(fit.odds_ratios[j]):>12}  "
            f"{_sig(se[j]):>12}  {_sig(or_se[j]):>12}  {_sig(pvals[j]):>12}  "
            f"{significance_code(float(pvals[j]))}"
        )
    extra = []
    if getattr(fit, "alpha_hat", None) is not None:
        extra.append(f"working correlation alpha: {_sig(fit.alpha_hat)}")
    if getattr(fit, "n_ratio_above_one", 0):
        extra.append(f"records with fitted mean above propensity: {fit.n_ratio_above_one}")
    if getattr(fit, "first_stage_omitted", False):
        extra.append("note: first-stage uncertainty omitted")
    lines.extend(extra)
    lines.append(SIGNIFICANCE_LEGEND)
    return "\n".join(lines) + "\n"


def render_rate_lines(label: str, est: RateEstimate) -> str:
    note = "  [first-stage uncertainty omitted]" if est.first_stage_omitted else ""
    return (
        f"{label}: {_sig(est.value)}  se {_sig(est.se)}  "
        f"95% CI [{_sig(est.ci_low)}, {_sig(est.ci_high)}]{note}"
    )


def rate_table_rows(named: list[tuple[str, RateEstimate]]) -> list[dict[str, str]]:
    rows = []
    for label, est in named:
        rows.append(
            {
                "estimand": label,
                "value": _full(est.value),
                "se": _full(est.se),
                "ci_low": _full(est.ci_low),
                "ci_high": _full(est.ci_high),
                "kappa": _full(est.kappa),
                "first_stage_omitted": str(est.first_stage_omitted).lower(),
            }
        )
    return rows


def grouped_rate_rows(grouped: dict[object, GroupRates]) -> list[dict[str, str]]:
    rows = []
    for label in sorted(grouped, key=str):
        g = grouped[label]
        for estimand, est in (
            ("total", g.total),
            ("reporting_rate", g.pi_star),
            ("event_rate", g.q_star),
        ):
            rows.append(
                {
                    "group": str(label),
                    "n_records": str(g.n_records),
                    "estimand": estimand,
                    "value": _full(est.value),
                    "se": _full(est.se),
                    "ci_low": _full(est.ci_low),
                    "ci_high": _full(est.ci_high),
                    "kappa": _full(est.kappa),
                }
            )
    return rows


def write_csv(path: Path | str, rows: list[dict[str, str]], fieldnames: list[str]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def summary_csv_rows(summaries) -> list[dict[str, str]]:
    """Rows for a coverage-study summary table."""
    rows = []
    for s in summaries:
        rows.append(
            {
                "parameter": s.name,
                "truth": _full(s.truth),
                "mean": _full(s.mean),
                "bias": _full(s.bias),
                "rmse": _full(s.rmse),
                "coverage": _full(s.coverage) if np.isfinite(s.coverage) else "",
                "coverage_se": _full(s.coverage_se) if np.isfinite(s.coverage_se) else "",
                "n_used": str(s.n_used),
            }
        )
    return rows
