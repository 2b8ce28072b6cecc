"""Exception types raised across the toolkit."""


class WattsplitError(Exception):
    """Base class for all toolkit errors."""


class NoZeroCrossings(WattsplitError):
    """Voltage signal has no sign changes, so periods cannot be segmented."""


class FrequencyOutOfRange(WattsplitError):
    """Detected mains period deviates more than 10 % from the nominal one."""


class LengthMismatch(WattsplitError):
    """Paired signals or series do not share length/sample rate/alignment."""


class PeriodTooShort(WattsplitError):
    """A mains period holds too few samples for the requested harmonic count."""


class PatternCollapse(WattsplitError):
    """Too few periods match the rectifier pulse template after filtering."""


class WindowTooWide(WattsplitError):
    """A peak window exceeds the maximum fraction of its mains period."""


class NoCorrelatedHarmonic(WattsplitError):
    """No current harmonic correlates with the residual power strongly enough."""


class DegenerateFit(WattsplitError):
    """Regressor variance is too small for a meaningful linear fit."""


class InsufficientData(WattsplitError):
    """Not enough periods/samples to compute the requested quantity."""


class NoSteadyState(WattsplitError):
    """A transient envelope never settles near its steady-state level."""


class ClassTooSmall(WattsplitError):
    """A fingerprint class has fewer training samples than required."""


class AllUndefined(WattsplitError):
    """Every accuracy entry is undefined; a weighted average does not exist."""


class ParseError(WattsplitError):
    """A data file could not be parsed; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnitError(WattsplitError):
    """A channel declares a unit inconsistent with its kind."""


class ClassCollisionWarning(UserWarning):
    """Two fingerprint classes contain (near-)identical training samples."""
