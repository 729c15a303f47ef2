"""Error and warning types shared across the package."""


class UndercountError(Exception):
    """Base class for all errors raised by this package."""


class SingularDesign(UndercountError):
    """The (weighted) Gram matrix of the design is rank deficient."""


class Separation(UndercountError):
    """The outcomes are separable, so the logistic fit has no finite solution."""


class NoConvergence(UndercountError):
    """An iterative solver hit its iteration cap without converging."""


class LonelyPSU(UndercountError):
    """A stratum contains a single PSU and no fallback strategy was enabled."""


class FeatureMismatch(UndercountError):
    """Covariates do not line up with the feature names of a fitted model."""


class ModelMismatch(FeatureMismatch):
    """Record covariates are misaligned with the reporting model."""


class PositivityViolation(UndercountError):
    """Predicted reporting propensities fall below the configured floor."""


class InvalidCorrelation(UndercountError):
    """Working correlation outside the range that keeps the matrix positive definite."""


class DegenerateOutcomes(UndercountError):
    """An evaluation metric needs both outcome classes but got only one."""


class SchemaError(UndercountError):
    """An input table does not match its declared schema."""


class EncodingMismatch(SchemaError):
    """Feature encoding cannot be applied consistently to the input data."""


class SpecInvalid(UndercountError):
    """A simulation scenario violates its own constraints."""


class MissingFirstStageCovariance(UserWarning):
    """Variance omits the first-stage term because no survey covariance is available."""


class NoMultiOffenderClusters(UserWarning):
    """No cluster has two or more members; the working correlation falls back to zero."""


class NonmonotoneFitWarning(UserWarning):
    """Fitted mean over propensity exceeds one on a noticeable share of records."""


class EmptyCellWarning(UserWarning):
    """A probed grid cell contains no records and was skipped."""
