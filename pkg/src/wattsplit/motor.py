"""Power estimation for a fixed-speed motor with continuously varying load.

The residual power left after the rectifier and switching-event stages is
attributed to the one motor whose mechanical load varies continuously:
a current harmonic of the aggregate correlating linearly with the residual
power is identified, a linear fit maps the harmonic magnitude to power, and
the fit is evaluated over the motor's on-intervals.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.signal import medfilt

from .errors import DegenerateFit, LengthMismatch, NoCorrelatedHarmonic

MIN_FIT_SAMPLES = 30


@dataclass(frozen=True)
class HarmonicCorrelation:
    """A current harmonic linearly tied to the residual power."""

    harmonic_index: int
    pearson_r: float
    slope: float  # W per A
    intercept: float  # W
    n_samples: int


def residual_power(aggregate_p: np.ndarray, estimated: list[np.ndarray]) -> np.ndarray:
    """Aggregate power minus the sum of already-estimated load series."""
    aggregate_p = np.asarray(aggregate_p, dtype=float)
    out = aggregate_p.copy()
    for series in estimated:
        series = np.asarray(series, dtype=float)
        if series.shape != aggregate_p.shape:
            raise LengthMismatch(
                f"estimate length {series.shape} != aggregate {aggregate_p.shape}"
            )
        out -= series
    return out


def pearson_r(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dx = x - x.mean()
    dy = y - y.mean()
    denom = np.sqrt((dx @ dx) * (dy @ dy))
    if denom == 0:
        return 0.0
    return float((dx @ dy) / denom)


def _smooth(series: np.ndarray, kernel: int) -> np.ndarray:
    if kernel <= 1:
        return series
    if kernel % 2 == 0:
        kernel += 1
    return medfilt(series, kernel)


def find_correlated_harmonic(
    dp_agg: np.ndarray,
    harmonic_series: Mapping[int, np.ndarray],
    min_abs_r: float = 0.9,
    noise_floor_w: float = 25.0,
    smooth_periods: int = 5,
) -> HarmonicCorrelation:
    """Pick the harmonic index whose |I_k| series best tracks dp_agg.

    Only periods where dp_agg exceeds the noise floor enter the correlation;
    the fundamental is not a valid candidate (it reflects every load). Raises
    NoCorrelatedHarmonic when no candidate reaches ``min_abs_r`` or too few
    periods qualify.
    """
    if not harmonic_series:
        raise ValueError("candidate harmonic set is empty")
    if 1 in harmonic_series:
        raise ValueError("the fundamental cannot serve as a candidate")
    dp_agg = np.asarray(dp_agg, dtype=float)
    dp_s = _smooth(dp_agg, smooth_periods)
    mask = dp_s > noise_floor_w
    if mask.sum() < MIN_FIT_SAMPLES:
        raise NoCorrelatedHarmonic(
            f"only {int(mask.sum())} periods above the {noise_floor_w} W floor"
        )

    best_k, best_r, best_ix = None, 0.0, None
    for k, series in sorted(harmonic_series.items()):
        series = np.asarray(series, dtype=float)
        if series.shape != dp_agg.shape:
            raise LengthMismatch(f"harmonic {k} series length mismatch")
        ix = _smooth(series, smooth_periods)[mask]
        r = pearson_r(ix, dp_s[mask])
        if best_k is None or abs(r) > abs(best_r):
            best_k, best_r, best_ix = k, r, ix
    if best_k is None or abs(best_r) < min_abs_r:
        raise NoCorrelatedHarmonic(f"best |r| = {abs(best_r):.3f} < {min_abs_r}")
    slope, intercept = _linear_fit(best_ix, dp_s[mask])
    return HarmonicCorrelation(best_k, best_r, slope, intercept, int(mask.sum()))


def _linear_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    if float(np.var(x)) < 1e-12:
        raise DegenerateFit("regressor variance below 1e-12")
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(intercept)


def fit_and_estimate(
    dp_agg: np.ndarray,
    ix_series: np.ndarray,
    on_mask: np.ndarray | None = None,
    smooth_periods: int = 5,
) -> tuple[float, float, np.ndarray]:
    """Least-squares map from |I_x| to power, evaluated on the on-intervals.

    Both series are median-smoothed over ``smooth_periods`` to suppress
    switching transients before the fit. The estimate is
    ``slope * |I_x| + intercept`` on the on-intervals, clamped at zero, and
    exactly zero elsewhere.
    """
    dp_agg = np.asarray(dp_agg, dtype=float)
    ix_series = np.asarray(ix_series, dtype=float)
    if dp_agg.shape != ix_series.shape:
        raise LengthMismatch("dp_agg and |I_x| series lengths differ")
    if on_mask is None:
        on_mask = np.ones(dp_agg.shape, dtype=bool)
    else:
        on_mask = np.asarray(on_mask, dtype=bool)
    if on_mask.sum() < MIN_FIT_SAMPLES:
        raise DegenerateFit(f"only {int(on_mask.sum())} on-periods to fit")

    dp_s = _smooth(dp_agg, smooth_periods)
    ix_s = _smooth(ix_series, smooth_periods)
    slope, intercept = _linear_fit(ix_s[on_mask], dp_s[on_mask])

    estimate = np.zeros(dp_agg.shape)
    estimate[on_mask] = np.clip(slope * ix_s[on_mask] + intercept, 0.0, None)
    return slope, intercept, estimate


def activity_mask_from_harmonic(
    ix_series: np.ndarray,
    smooth_periods: int = 5,
    min_contrast: float = 0.2,
) -> np.ndarray | None:
    """On-intervals of the motor from the step structure of its harmonic.

    The motor's switch-on/off shows as a step in |I_x|; thresholding midway
    between the low and high levels yields the on-mask. Returns None when the
    series shows no two-level structure (motor apparently always on or off).
    """
    ix = _smooth(np.asarray(ix_series, dtype=float), smooth_periods)
    lo = float(np.quantile(ix, 0.05))
    hi = float(np.quantile(ix, 0.95))
    if hi - lo < min_contrast * max(hi, 1e-12):
        return None
    mask = ix > (lo + hi) / 2.0
    # erode/dilate single-period glitches
    mask = medfilt(mask.astype(float), 3) > 0.5
    return mask
