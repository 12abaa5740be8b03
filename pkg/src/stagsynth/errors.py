"""Exception types shared across the package."""


class StagsynthError(Exception):
    """Base class for all stagsynth errors."""


class RaggedPanelError(StagsynthError):
    """The panel is missing (or duplicates) one or more (unit, time) cells."""


class InconsistentTreatmentError(StagsynthError):
    """A unit reports conflicting treatment times, or one off the time grid."""


class NoDonorsError(StagsynthError):
    """A treated unit has an empty donor pool, or no never-treated unit exists."""


class NoCovariatesError(StagsynthError):
    """A covariate-based operation was requested on a panel without covariates."""


class RegimeUnsupportedError(StagsynthError):
    """Dual recovery was requested outside the supported regime."""


class InsufficientPrePeriodsError(StagsynthError):
    """A treated unit is left with fewer than one pre-treatment period."""


class EventOutOfRangeError(StagsynthError):
    """The requested event time exceeds the configured horizon."""


class InsufficientDataError(StagsynthError):
    """Too few never-treated observations to calibrate a generating process."""


class AllTreatedError(StagsynthError):
    """Treatment assignment left no never-treated unit."""


class BothZeroError(StagsynthError):
    """The oracle pooling weight is undefined because both error terms are zero."""
