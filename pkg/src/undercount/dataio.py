"""CSV ingestion with declarative, alignment-safe feature encoding.

Survey files carry ``stratum,psu,weight,r,<feature columns...>``; offense
files carry ``incident_id,offender_id,a,<feature columns...>`` plus an
optional ``pi_hat`` column of externally computed reporting propensities.
Feature encoding is declared up front (numeric, or categorical with an
explicit level list and reference level), so the survey and offense files
expand to identical feature vectors by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .design_glm import DesignedSurvey
from .exceptions import EncodingMismatch, SchemaError
from .records import ReportedOffenses

__all__ = [
    "FeatureEncoder",
    "read_survey_csv",
    "read_offenses_csv",
    "attach_external_propensities",
]

_SURVEY_REQUIRED = ("stratum", "psu", "weight", "r")
_OFFENSE_REQUIRED = ("incident_id", "offender_id", "a")


@dataclass(frozen=True)
class _Categorical:
    levels: tuple[str, ...]
    reference: str


class FeatureEncoder:
    """Expands declared raw columns into a numeric design matrix.

    ``encodings`` maps a column name to either ``{"type": "numeric"}`` or
    ``{"type": "categorical", "levels": [...], "reference": level}``;
    undeclared columns default to numeric. Categorical columns expand to one
    indicator per non-reference level, named ``column=level``, in the
    declared order. The intercept is always the first output column.
    """

    def __init__(self, features: list[str], encodings: dict[str, dict] | None = None):
        if not features:
            raise EncodingMismatch("at least one feature must be declared")
        self.features = list(features)
        self._spec: dict[str, _Categorical | None] = {}
        encodings = encodings or {}
        for column in self.features:
            enc = encodings.get(column, {"type": "numeric"})
            kind = enc.get("type", "numeric")
            if kind == "numeric":
                self._spec[column] = None
            elif kind == "categorical":
                levels = [str(l) for l in enc.get("levels", [])]
                reference = str(enc.get("reference", levels[0] if levels else ""))
                if len(levels) < 2:
                    raise EncodingMismatch(f"categorical {column!r} needs at least two levels")
                if reference not in levels:
                    raise EncodingMismatch(
                        f"reference level {reference!r} of {column!r} not among its levels"
                    )
                self._spec[column] = _Categorical(levels=tuple(levels), reference=reference)
            else:
                raise EncodingMismatch(f"unknown encoding type {kind!r} for {column!r}")

    @property
    def feature_names(self) -> tuple[str, ...]:
        names = ["intercept"]
        for column in self.features:
            spec = self._spec[column]
            if spec is None:
                names.append(column)
            else:
                names.extend(
                    f"{column}={level}" for level in spec.levels if level != spec.reference
                )
        return tuple(names)

    def encode(self, frame: pd.DataFrame) -> np.ndarray:
        n = len(frame)
        cols = [np.ones(n)]
        for column in self.features:
            if column not in frame.columns:
                raise SchemaError(f"missing feature column {column!r}")
            spec = self._spec[column]
            if spec is None:
                values = pd.to_numeric(frame[column], errors="coerce").to_numpy(dtype=float)
                if np.any(~np.isfinite(values)):
                    raise SchemaError(f"non-numeric values in numeric column {column!r}")
                cols.append(values)
            else:
                raw = frame[column].astype(str).to_numpy()
                unknown = set(raw) - set(spec.levels)
                if unknown:
                    raise EncodingMismatch(
                        f"column {column!r} has undeclared levels: {sorted(unknown)}"
                    )
                for level in spec.levels:
                    if level == spec.reference:
                        continue
                    cols.append((raw == level).astype(float))
        return np.column_stack(cols)


def _read_csv(path) -> pd.DataFrame:
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False)
    except FileNotFoundError:
        raise
    except Exception as exc:  # malformed CSV
        raise SchemaError(f"cannot parse {path}: {exc}") from exc


def _require(frame: pd.DataFrame, columns: tuple[str, ...], path) -> None:
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise SchemaError(f"{path}: missing required columns {missing}")


def _numeric(frame: pd.DataFrame, column: str, path) -> np.ndarray:
    values = pd.to_numeric(frame[column], errors="coerce").to_numpy(dtype=float)
    if np.any(~np.isfinite(values)):
        raise SchemaError(f"{path}: non-numeric values in column {column!r}")
    return values


def read_survey_csv(path, encoder: FeatureEncoder) -> DesignedSurvey:
    """Load a survey file and expand its features."""
    frame = _read_csv(path)
    _require(frame, _SURVEY_REQUIRED, path)
    if len(frame) == 0:
        raise SchemaError(f"{path}: no records")
    z = encoder.encode(frame)
    r = _numeric(frame, "r", path)
    if not np.all(np.isin(r, (0.0, 1.0))):
        raise SchemaError(f"{path}: r must be binary")
    weight = _numeric(frame, "weight", path)
    if np.any(weight <= 0):
        raise SchemaError(f"{path}: weights must be positive")
    return DesignedSurvey(
        z=z,
        r=r,
        weight=weight,
        stratum=frame["stratum"].to_numpy(),
        psu=frame["psu"].to_numpy(),
        feature_names=encoder.feature_names,
    )


def read_offenses_csv(
    path,
    z_encoder: FeatureEncoder | None,
    x_encoder: FeatureEncoder,
    group_columns: list[str] | None = None,
) -> tuple[ReportedOffenses, dict[str, np.ndarray]]:
    """Load an offense file; returns the records plus any raw grouping columns."""
    frame = _read_csv(path)
    _require(frame, _OFFENSE_REQUIRED, path)
    if len(frame) == 0:
        raise SchemaError(f"{path}: no records")
    a = _numeric(frame, "a", path)
    if not np.all(np.isin(a, (0.0, 1.0))):
        raise SchemaError(f"{path}: a must be binary")
    pi_external = None
    if "pi_hat" in frame.columns:
        pi_external = _numeric(frame, "pi_hat", path)
        if np.any(pi_external <= 0) or np.any(pi_external > 1):
            raise SchemaError(f"{path}: pi_hat must lie in (0, 1]")
    groups: dict[str, np.ndarray] = {}
    for column in group_columns or []:
        if column not in frame.columns:
            raise SchemaError(f"{path}: missing grouping column {column!r}")
        groups[column] = frame[column].to_numpy()
    offenses = ReportedOffenses(
        incident_id=frame["incident_id"].to_numpy(),
        x=x_encoder.encode(frame),
        a=a,
        x_names=x_encoder.feature_names,
        z=z_encoder.encode(frame) if z_encoder is not None else None,
        z_names=z_encoder.feature_names if z_encoder is not None else None,
        pi_external=pi_external,
    )
    return offenses, groups


def attach_external_propensities(offenses: ReportedOffenses, path, offense_path) -> ReportedOffenses:
    """Merge a separate propensity file onto the records by (incident, offender)."""
    frame = _read_csv(path)
    _require(frame, ("incident_id", "offender_id", "pi_hat"), path)
    offense_frame = _read_csv(offense_path)
    keys = list(zip(offense_frame["incident_id"], offense_frame["offender_id"]))
    lookup = {
        (i, o): p for i, o, p in zip(frame["incident_id"], frame["offender_id"], frame["pi_hat"])
    }
    missing = [k for k in keys if k not in lookup]
    if missing:
        raise SchemaError(
            f"{path}: no propensity for {len(missing)} records (first: {missing[0]})"
        )
    pi = np.asarray([float(lookup[k]) for k in keys])
    if np.any(pi <= 0) or np.any(pi > 1):
        raise SchemaError(f"{path}: pi_hat must lie in (0, 1]")
    return ReportedOffenses(
        incident_id=offenses.incident_id,
        x=offenses.x,
        a=offenses.a,
        x_names=offenses.x_names,
        z=offenses.z,
        z_names=offenses.z_names,
        pi_external=pi,
    )
