"""Shared exception types.

``NumericalFailure`` marks conditions where the inputs were well-formed but
the computation could not produce a trustworthy answer; the command line
maps these to exit code 3 and input problems (ValueError, OSError, bad
config) to exit code 2.
"""


class NumericalFailure(RuntimeError):
    """Well-formed input, but no numerically trustworthy result."""


class EmptySetting(ValueError):
    """All 8 counts of an analyzed setting triple are zero."""


class DegenerateScan(NumericalFailure):
    """Phase-scan objective is flat within statistical error."""


class NoPeak(NumericalFailure):
    """Offset search found no cross-correlation peak above background."""


class UnsortedInput(ValueError):
    """A time-tag stream was not sorted by timestamp."""


class ScheduleGap(ValueError):
    """An event time is not covered by the basis schedule."""


class InsufficientData(ValueError):
    """Not enough samples for the requested statistic."""


class FitFailed(NumericalFailure):
    """A model fit did not meet its residual threshold."""


class NoOverlap(ValueError):
    """Two bit streams share no overlapping time range."""


class ConfigError(ValueError):
    """Invalid simulation configuration."""


class UnknownScenario(ConfigError):
    """Requested scenario name is not defined."""


class MissingBudget(ConfigError):
    """A station's delay budget is incomplete."""
