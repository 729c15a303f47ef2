"""Model evaluation and misspecification probes.

Weight-aware discrimination and calibration summaries for the reporting
model, a positivity audit of predicted propensities, and the focal-slope
bootstrap diagnostic that refits the corrected event model across
covariate-conditioned subsamples.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .design_glm import FitConfig, PiModel
from .exceptions import DegenerateOutcomes, EmptyCellWarning, FeatureMismatch, UndercountError
from .records import ReportedOffenses, resolve_propensities
from .reweight import Z975
from .twostep import fit_arrest_model

__all__ = [
    "weighted_auc",
    "weighted_calibration",
    "CalibrationBin",
    "positivity_report",
    "PositivityReport",
    "FocalSlopeConfig",
    "FocalSlopeCell",
    "FocalSlopeReport",
    "focal_slope",
]


def weighted_auc(
    predictions: np.ndarray,
    outcomes: np.ndarray,
    weights: np.ndarray | None = None,
) -> float:
    """Weight-weighted probability that a random positive outranks a random negative.

    Ties in the predictions count one half. Invariant to strictly monotone
    transforms of the predictions and to positive rescaling of the weights.
    """
    predictions = np.asarray(predictions, dtype=float)
    outcomes = np.asarray(outcomes, dtype=float)
    weights = np.ones_like(predictions) if weights is None else np.asarray(weights, dtype=float)
    if not np.all(np.isin(outcomes, (0.0, 1.0))):
        raise ValueError("outcomes must be binary")
    w_pos = float(weights[outcomes == 1].sum())
    w_neg = float(weights[outcomes == 0].sum())
    if w_pos == 0.0 or w_neg == 0.0:
        raise DegenerateOutcomes("need both a positive and a negative outcome")

    order = np.argsort(predictions, kind="stable")
    p_sorted = predictions[order]
    y_sorted = outcomes[order]
    w_sorted = weights[order]

    total = 0.0
    neg_below = 0.0
    start = 0
    n = p_sorted.size
    while start < n:
        stop = start
        while stop < n and p_sorted[stop] == p_sorted[start]:
            stop += 1
        block_pos = float(w_sorted[start:stop][y_sorted[start:stop] == 1].sum())
        block_neg = float(w_sorted[start:stop][y_sorted[start:stop] == 0].sum())
        total += block_pos * (neg_below + 0.5 * block_neg)
        neg_below += block_neg
        start = stop
    return total / (w_pos * w_neg)


@dataclass(frozen=True)
class CalibrationBin:
    bin_low: float
    bin_high: float
    n: int
    mean_predicted: float
    observed_rate: float
    ci_low: float
    ci_high: float


def weighted_calibration(
    predictions: np.ndarray,
    outcomes: np.ndarray,
    weights: np.ndarray | None = None,
    bins: int = 10,
) -> list[CalibrationBin]:
    """Weighted reliability table over equal-width bins on [0, 1].

    Each bin reports the weighted mean prediction, the weighted observed
    rate, and a Wald interval using the Kish effective sample size. Empty
    bins are omitted.
    """
    predictions = np.asarray(predictions, dtype=float)
    outcomes = np.asarray(outcomes, dtype=float)
    weights = np.ones_like(predictions) if weights is None else np.asarray(weights, dtype=float)
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.clip(np.digitize(predictions, edges[1:-1]), 0, bins - 1)
    out = []
    for b in range(bins):
        mask = idx == b
        if not mask.any():
            continue
        w = weights[mask]
        w_sum = float(w.sum())
        observed = float((w * outcomes[mask]).sum() / w_sum)
        n_eff = w_sum**2 / float((w**2).sum())
        half = Z975 * np.sqrt(max(observed * (1.0 - observed), 0.0) / n_eff)
        out.append(
            CalibrationBin(
                bin_low=float(edges[b]),
                bin_high=float(edges[b + 1]),
                n=int(mask.sum()),
                mean_predicted=float((w * predictions[mask]).sum() / w_sum),
                observed_rate=observed,
                ci_low=max(observed - half, 0.0),
                ci_high=min(observed + half, 1.0),
            )
        )
    return out


@dataclass(frozen=True)
class GroupPositivity:
    n: int
    minimum: float
    n_below: int
    passed: bool


@dataclass(frozen=True)
class PositivityReport:
    """Distributional audit of predicted reporting propensities."""

    floor: float
    n: int
    minimum: float
    quantiles: dict[float, float]
    n_below: int
    passed: bool
    groups: dict[object, GroupPositivity] = field(default_factory=dict)


_QUANTILES = (0.01, 0.05, 0.25, 0.50)


def positivity_report(
    offenses: ReportedOffenses,
    model: PiModel | None,
    floor: float = 0.01,
    groups: np.ndarray | None = None,
) -> PositivityReport:
    """Minimum and low quantiles of predicted propensities against a floor.

    Report-only: it never raises on violations, the estimators consume the
    verdict. The verdict is monotone in the floor (pass at f implies pass at
    any smaller floor).
    """
    pi, _ = resolve_propensities(
        offenses,
        model,
        positivity_floor=0.0,
        allow_below_floor=True,
        warn_missing_first_stage=False,
    )
    per_group: dict[object, GroupPositivity] = {}
    if groups is not None:
        groups = np.asarray(groups)
        if len(groups) != pi.size:
            raise ValueError("groups must have one label per record")
        for label in np.unique(groups):
            sub = pi[groups == label]
            below = int((sub < floor).sum())
            per_group[label] = GroupPositivity(
                n=sub.size, minimum=float(sub.min()), n_below=below, passed=below == 0
            )
    n_below = int((pi < floor).sum())
    return PositivityReport(
        floor=floor,
        n=pi.size,
        minimum=float(pi.min()),
        quantiles={q: float(np.quantile(pi, q)) for q in _QUANTILES},
        n_below=n_below,
        passed=n_below == 0,
        groups=per_group,
    )


@dataclass(frozen=True)
class FocalSlopeConfig:
    """Settings for the focal-slope bootstrap diagnostic."""

    n_boot: int = 50
    resample_size: int = 10_000
    grid_cells: int = 5
    seed: int = 0
    features: tuple[str, ...] | None = None
    fit_config: FitConfig = FitConfig()


@dataclass(frozen=True)
class FocalSlopeCell:
    feature: str
    center: float
    n_records: int
    estimates: np.ndarray
    n_failed: int

    @property
    def mean(self) -> float:
        return float(np.mean(self.estimates)) if self.estimates.size else float("nan")


@dataclass(frozen=True)
class FocalSlopeReport:
    focal: str
    cells: list[FocalSlopeCell]


def _cell_centers(values: np.ndarray, grid_cells: int) -> np.ndarray:
    unique = np.unique(values)
    if np.all(np.isin(unique, (0.0, 1.0))):
        return np.array([0.0, 1.0])
    return np.linspace(values.min(), values.max(), grid_cells)


def _take(offenses: ReportedOffenses, rows: np.ndarray) -> ReportedOffenses:
    return ReportedOffenses(
        incident_id=offenses.incident_id[rows],
        x=offenses.x[rows],
        a=offenses.a[rows],
        x_names=offenses.x_names,
        z=None if offenses.z is None else offenses.z[rows],
        z_names=offenses.z_names,
        pi_external=None if offenses.pi_external is None else offenses.pi_external[rows],
    )


def focal_slope(
    offenses: ReportedOffenses,
    model: PiModel | None,
    focal: str,
    config: FocalSlopeConfig = FocalSlopeConfig(),
    positivity_floor: float = 0.01,
    allow_below_floor: bool = False,
) -> FocalSlopeReport:
    """Bootstrap distribution of one coefficient across covariate-conditioned cells.

    For every probed feature, records are assigned to the nearest cell center
    (five evenly spaced centers for numeric features, {0, 1} for binary ones;
    ties go to the lower cell). Within each nonempty cell the corrected event
    model is refit on ``n_boot`` bootstrap resamples of ``resample_size``
    records and the focal coefficient is recorded. Resample seeds derive
    deterministically from (seed, feature, cell, replicate). Fit failures are
    recorded per resample, not fatal.
    """
    if focal not in offenses.x_names:
        raise FeatureMismatch(f"focal coefficient {focal!r} not among {offenses.x_names}")
    focal_idx = offenses.x_names.index(focal)
    probed = config.features
    if probed is None:
        probed = tuple(name for name in offenses.x_names if name != "intercept")
    for name in probed:
        if name not in offenses.x_names:
            raise FeatureMismatch(f"probed feature {name!r} not among {offenses.x_names}")

    cells: list[FocalSlopeCell] = []
    for name in probed:
        f_idx = offenses.x_names.index(name)
        values = offenses.x[:, f_idx]
        centers = _cell_centers(values, config.grid_cells)
        # nearest center, ties resolved to the lower cell by argmin order
        assignment = np.argmin(np.abs(values[:, None] - centers[None, :]), axis=1)
        for c_idx, center in enumerate(centers):
            rows = np.flatnonzero(assignment == c_idx)
            if rows.size == 0:
                warnings.warn(
                    f"empty cell {center:g} for feature {name!r}; skipped",
                    EmptyCellWarning,
                    stacklevel=2,
                )
                continue
            estimates = []
            n_failed = 0
            for b in range(config.n_boot):
                rng = np.random.default_rng(
                    np.random.SeedSequence((config.seed, f_idx, c_idx, b))
                )
                draw = rows[rng.integers(0, rows.size, size=config.resample_size)]
                sub = _take(offenses, draw)
                # columns constant within the cell (the probed one, typically)
                # are absorbed into the intercept of the refit
                keep = [0] + [
                    j for j in range(1, sub.x.shape[1]) if np.ptp(sub.x[:, j]) > 0.0
                ]
                if focal_idx not in keep:
                    n_failed += 1
                    continue
                reduced = ReportedOffenses(
                    incident_id=sub.incident_id,
                    x=sub.x[:, keep],
                    a=sub.a,
                    x_names=tuple(sub.x_names[j] for j in keep),
                    z=sub.z,
                    z_names=sub.z_names,
                    pi_external=sub.pi_external,
                )
                try:
                    fit = fit_arrest_model(
                        reduced,
                        model,
                        config.fit_config,
                        positivity_floor,
                        allow_below_floor,
                    )
                    estimates.append(fit.theta_hat[keep.index(focal_idx)])
                except UndercountError:
                    n_failed += 1
            cells.append(
                FocalSlopeCell(
                    feature=name,
                    center=float(center),
                    n_records=int(rows.size),
                    estimates=np.asarray(estimates),
                    n_failed=n_failed,
                )
            )
    return FocalSlopeReport(focal=focal, cells=cells)
