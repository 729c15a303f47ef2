"""Reported-record container and propensity resolution shared by the estimators."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .design_glm import PiModel, predict_pi
from .exceptions import MissingFirstStageCovariance, ModelMismatch, PositivityViolation

__all__ = [
    "ReportedOffenses",
    "FirstStage",
    "resolve_propensities",
    "resolve_propensity_parts",
]


@dataclass(frozen=True)
class ReportedOffenses:
    """Reported incidents: one row per offender.

    These are police-record rows, so every row is reported by construction.
    ``z`` holds the incident covariates aligned with a reporting model;
    ``pi_external`` optionally carries externally computed per-record
    reporting propensities (sensitivity-analysis mode), in which case ``z``
    may be omitted.
    """

    incident_id: np.ndarray
    x: np.ndarray
    a: np.ndarray
    x_names: tuple[str, ...]
    z: np.ndarray | None = None
    z_names: tuple[str, ...] | None = None
    pi_external: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        a = np.asarray(self.a, dtype=float)
        object.__setattr__(self, "incident_id", np.asarray(self.incident_id))
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "x_names", tuple(self.x_names))
        if x.ndim != 2:
            raise ValueError("x must be a 2-d array")
        n, d = x.shape
        if len(self.x_names) != d:
            raise ValueError("x_names must have one entry per column of x")
        if len(a) != n or len(self.incident_id) != n:
            raise ValueError("incident_id, x and a must have matching length")
        if not np.all(np.isin(a, (0.0, 1.0))):
            raise ValueError("arrest indicators must be binary")
        if not np.all(np.isfinite(x)):
            raise ValueError("covariates must be finite")
        if self.z is not None:
            z = np.asarray(self.z, dtype=float)
            object.__setattr__(self, "z", z)
            if z.ndim != 2 or z.shape[0] != n:
                raise ValueError("z must be 2-d with one row per record")
            if self.z_names is None or len(tuple(self.z_names)) != z.shape[1]:
                raise ValueError("z_names must have one entry per column of z")
            object.__setattr__(self, "z_names", tuple(self.z_names))
            if not np.all(np.isfinite(z)):
                raise ValueError("covariates must be finite")
        if self.pi_external is not None:
            pi = np.asarray(self.pi_external, dtype=float)
            object.__setattr__(self, "pi_external", pi)
            if pi.shape != (n,):
                raise ValueError("pi_external must have one entry per record")
            if not (np.all(np.isfinite(pi)) and np.all(pi > 0) and np.all(pi <= 1)):
                raise ValueError("external propensities must lie in (0, 1]")

    @property
    def n(self) -> int:
        return self.x.shape[0]


class FirstStage(NamedTuple):
    """First-stage ingredients needed for uncertainty propagation."""

    gamma_hat: np.ndarray
    sigma_v: np.ndarray
    n_survey: int


def resolve_propensity_parts(
    z: np.ndarray | None,
    z_names: tuple[str, ...] | None,
    pi_external: np.ndarray | None,
    model: PiModel | None,
    positivity_floor: float = 0.01,
    allow_below_floor: bool = False,
    warn_missing_first_stage: bool = True,
) -> tuple[np.ndarray, FirstStage | None]:
    if model is not None:
        if z is None:
            raise ModelMismatch("records carry no incident covariates for the model")
        if z_names != model.feature_names:
            raise ModelMismatch(
                f"record covariates {z_names} do not match model features {model.feature_names}"
            )
        pi = predict_pi(model, z)
        first_stage: FirstStage | None = None
        if model.sigma_v is not None:
            first_stage = FirstStage(model.gamma_hat, model.sigma_v, model.n_survey)
    elif pi_external is not None:
        pi = pi_external
        first_stage = None
    else:
        raise ValueError("no reporting propensities: pass a model or external propensities")

    if first_stage is None and warn_missing_first_stage:
        warnings.warn(
            "first-stage uncertainty omitted: no survey covariance available",
            MissingFirstStageCovariance,
            stacklevel=3,
        )
    below = pi < positivity_floor
    if below.any() and not allow_below_floor:
        raise PositivityViolation(
            f"{int(below.sum())} of {pi.size} propensities fall below the floor "
            f"{positivity_floor} (minimum {pi.min():.3g})"
        )
    return pi, first_stage


def resolve_propensities(
    offenses: ReportedOffenses,
    model: PiModel | None,
    positivity_floor: float = 0.01,
    allow_below_floor: bool = False,
    warn_missing_first_stage: bool = True,
) -> tuple[np.ndarray, FirstStage | None]:
    """Per-record reporting propensities and, when available, the first stage.

    Uses ``model`` when given (validating feature alignment), otherwise the
    records' external propensity column. Returns ``(pi, first_stage)`` where
    ``first_stage`` is ``None`` whenever no survey covariance can be
    propagated; a :class:`MissingFirstStageCovariance` warning is emitted in
    that case.

    Raises
    ------
    ModelMismatch
        Feature misalignment between the records and the model.
    PositivityViolation
        Some propensity falls below ``positivity_floor`` and
        ``allow_below_floor`` is not set.
    """
    return resolve_propensity_parts(
        offenses.z,
        offenses.z_names,
        offenses.pi_external,
        model,
        positivity_floor,
        allow_below_floor,
        warn_missing_first_stage,
    )
