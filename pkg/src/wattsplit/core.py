"""Waveform container, mains-period segmentation and per-period electrical features.

Everything downstream (simulation, disaggregation, labeling, scoring) works on
two primitives defined here: the :class:`Waveform` sample container and the
per-period :class:`PeriodFeatures` record (active/reactive/apparent power, RMS
values and complex current harmonics).

Conventions used throughout:

* Period boundaries are positive-going zero crossings of the voltage, located
  with linear interpolation between the bracketing samples, so they are
  fractional sample positions.
* Each period is resampled onto a fixed grid (default 200 points) before the
  DFT so that harmonic bins line up across periods of slightly different
  length.
* Harmonic coefficients are complex peak amplitudes: a current
  ``i(t) = A*cos(k*w*t + phi)`` yields ``harmonics[k-1] = A*exp(1j*phi)``.
* Reactive power ``q`` is fundamental-only (displacement) reactive power,
  positive for a lagging (inductive) current.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    FrequencyOutOfRange,
    LengthMismatch,
    NoZeroCrossings,
    PeriodTooShort,
)

CURRENT = "current"
VOLTAGE = "voltage"

#: points per period after resampling, shared by all per-period DFTs
DEFAULT_GRID = 200

#: default number of current harmonics kept per period (2.5 kHz at 50 Hz)
DEFAULT_HARMONICS = 50

_MAX_SAMPLES = 200_000_000  # memory guard, ~1.6 GB of float64


@dataclass(frozen=True)
class Waveform:
    """A uniformly sampled current or voltage signal.

    Samples are stored as a read-only float64 array. ``kind`` is either
    ``"current"`` or ``"voltage"``; ``start_time`` is the absolute time of the
    first sample in seconds.
    """

    samples: np.ndarray
    sample_rate: float
    kind: str
    start_time: float = 0.0

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("samples must be a non-empty 1-D sequence")
        if samples.size > _MAX_SAMPLES:
            raise ValueError(f"waveform of {samples.size} samples exceeds memory budget")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        if self.kind not in (CURRENT, VOLTAGE):
            raise ValueError(f"kind must be '{CURRENT}' or '{VOLTAGE}', got {self.kind!r}")
        if not np.isfinite(samples).all():
            raise ValueError("samples contain NaN or Inf")
        samples = samples.copy()
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", float(self.sample_rate))
        object.__setattr__(self, "start_time", float(self.start_time))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def times(self) -> np.ndarray:
        return self.start_time + np.arange(self.samples.size) / self.sample_rate

    def with_samples(self, samples: np.ndarray) -> "Waveform":
        """Same metadata, new sample values."""
        return replace(self, samples=samples)


@dataclass(frozen=True)
class SensorModel:
    """First-order low-pass response of a current sensor.

    Gain at frequency ``f`` is ``v0 / sqrt(1 + (f/f_cut)**2)`` with the
    matching ``-atan(f/f_cut)`` phase lag.
    """

    v0: float
    f_cut: float

    def __post_init__(self):
        if not self.v0 > 0:
            raise ValueError("v0 must be positive")
        if not self.f_cut > 0:
            raise ValueError("f_cut must be positive")

    def gain(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        return self.v0 / np.sqrt(1.0 + (f / self.f_cut) ** 2)


@dataclass
class PeriodFeatures:
    """Electrical quantities of one mains period.

    ``harmonics[k-1]`` is the complex peak amplitude of the k-th current
    harmonic (k = 1 is the fundamental).
    """

    period_index: int
    t_start: float
    p: float
    q: float
    s: float
    i_rms: float
    v_rms: float
    harmonics: np.ndarray = field(repr=False)


def segment_periods(voltage: Waveform, nominal_freq: float = 50.0) -> np.ndarray:
    """Locate mains-period boundaries in a voltage waveform.

    Returns fractional sample positions of the positive-going zero crossings
    after DC removal (mean subtraction, no smoothing). Raises
    :class:`NoZeroCrossings` when the signal never changes sign and
    :class:`FrequencyOutOfRange` when any boundary spacing deviates more than
    10 % from the nominal period.
    """
    if voltage.kind != VOLTAGE:
        raise ValueError("segment_periods expects a voltage waveform")
    if not nominal_freq > 0:
        raise ValueError("nominal_freq must be positive")
    nominal_period = voltage.sample_rate / nominal_freq
    if voltage.samples.size < 2 * nominal_period:
        raise ValueError("voltage must span at least two nominal periods")

    x = voltage.samples - voltage.samples.mean()
    # relative deadband so samples sitting numerically on zero count as zero
    eps = 1e-12 * np.abs(x).max()
    if not (np.any(x > eps) and np.any(x < -eps)):
        raise NoZeroCrossings("voltage has no sign changes")

    idx = np.flatnonzero((x[:-1] <= eps) & (x[1:] > eps))
    if idx.size == 0:
        raise NoZeroCrossings("voltage has no positive-going zero crossings")
    frac = np.clip(-x[idx] / (x[idx + 1] - x[idx]), 0.0, 1.0)
    positions = idx + frac

    # debounce: noise can create bursts of crossings near zero
    kept = [positions[0]]
    for pos in positions[1:]:
        if pos - kept[-1] >= 0.5 * nominal_period:
            kept.append(pos)
    boundaries = np.asarray(kept, dtype=float)

    if boundaries.size >= 2:
        spacing = np.diff(boundaries)
        deviation = np.abs(spacing - nominal_period) / nominal_period
        if np.any(deviation > 0.10):
            worst = float(deviation.max())
            raise FrequencyOutOfRange(
                f"period deviates {worst:.1%} from nominal {nominal_freq} Hz"
            )
    return boundaries


def uniform_boundaries(n_samples: int, sample_rate: float, freq: float) -> np.ndarray:
    """Boundaries of an ideal ``freq`` grid, for signals without a voltage reference."""
    period = sample_rate / freq
    n_periods = int(np.floor((n_samples - 1) / period))
    return np.arange(n_periods + 1) * period


def _resample_periods(samples: np.ndarray, boundaries: np.ndarray, grid: int) -> np.ndarray:
    """Linear-interpolation resampling of each period onto ``grid`` points."""
    b0 = boundaries[:-1]
    lengths = np.diff(boundaries)
    offsets = np.arange(grid) / grid
    positions = b0[:, None] + lengths[:, None] * offsets[None, :]
    values = np.interp(positions.ravel(), np.arange(samples.size), samples)
    return values.reshape(len(b0), grid)


def compute_period_features(
    current: Waveform,
    voltage: Waveform,
    boundaries: np.ndarray,
    harmonic_count: int = DEFAULT_HARMONICS,
    grid: int = DEFAULT_GRID,
) -> list[PeriodFeatures]:
    """Per-period power, RMS and current-harmonic features.

    ``boundaries`` come from :func:`segment_periods` (or
    :func:`uniform_boundaries`); ``harmonic_count`` harmonics of the current
    are evaluated at multiples of each period's own fundamental using a
    single-period rectangular window on the resampled grid.
    """
    if current.kind != CURRENT or voltage.kind != VOLTAGE:
        raise ValueError("expected (current, voltage) waveform pair")
    if current.samples.size != voltage.samples.size:
        raise LengthMismatch(
            f"current has {current.samples.size} samples, voltage {voltage.samples.size}"
        )
    if current.sample_rate != voltage.sample_rate:
        raise LengthMismatch("current and voltage sample rates differ")
    if current.start_time != voltage.start_time:
        raise LengthMismatch("current and voltage are not aligned in time")
    if harmonic_count < 1:
        raise ValueError("harmonic_count must be >= 1")
    if harmonic_count > grid // 2 - 1:
        raise ValueError(f"harmonic_count {harmonic_count} exceeds grid capacity {grid // 2 - 1}")

    boundaries = np.asarray(boundaries, dtype=float)
    if boundaries.ndim != 1 or boundaries.size < 2:
        raise ValueError("need at least two period boundaries")
    lengths = np.diff(boundaries)
    min_len = 2 * (harmonic_count + 1)
    if np.any(lengths < min_len):
        raise PeriodTooShort(
            f"shortest period holds {lengths.min():.0f} samples, "
            f"need >= {min_len} for {harmonic_count} harmonics"
        )

    i_grid = _resample_periods(current.samples, boundaries, grid)
    v_grid = _resample_periods(voltage.samples, boundaries, grid)

    p = np.mean(v_grid * i_grid, axis=1)
    i_rms = np.sqrt(np.mean(i_grid**2, axis=1))
    v_rms = np.sqrt(np.mean(v_grid**2, axis=1))
    s = v_rms * i_rms

    # complex peak amplitudes; bin k of the rfft is harmonic k of the period
    spec_i = np.fft.rfft(i_grid, axis=1) * (2.0 / grid)
    spec_v = np.fft.rfft(v_grid, axis=1) * (2.0 / grid)
    harmonics = spec_i[:, 1 : harmonic_count + 1]

    # displacement reactive power from the fundamental V-I phase difference
    q = 0.5 * np.imag(spec_v[:, 1] * np.conj(spec_i[:, 1]))

    fs = current.sample_rate
    t0 = current.start_time
    out = []
    for m in range(len(lengths)):
        out.append(
            PeriodFeatures(
                period_index=m,
                t_start=t0 + boundaries[m] / fs,
                p=float(p[m]),
                q=float(q[m]),
                s=float(s[m]),
                i_rms=float(i_rms[m]),
                v_rms=float(v_rms[m]),
                harmonics=harmonics[m].copy(),
            )
        )
    return out


def apply_sensor_model(w: Waveform, model: SensorModel) -> Waveform:
    """Run a waveform through the first-order low-pass sensor response.

    Implemented in the frequency domain, so the magnitude and phase match the
    analog response exactly on every DFT bin. Linear by construction.
    """
    n = w.samples.size
    spectrum = np.fft.rfft(w.samples)
    f = np.fft.rfftfreq(n, d=1.0 / w.sample_rate)
    response = model.v0 / (1.0 + 1j * f / model.f_cut)
    filtered = np.fft.irfft(spectrum * response, n=n)
    return w.with_samples(filtered)


# ---------------------------------------------------------------------------
# small helpers over feature sequences


def feature_series(features, name: str) -> np.ndarray:
    """Column extraction: feature_series(feats, "p") -> array of p values."""
    return np.array([getattr(f, name) for f in features], dtype=float)


def harmonic_magnitudes(features, k: int) -> np.ndarray:
    """Per-period |I_k| series (peak amplitude of harmonic ``k``)."""
    if k < 1:
        raise ValueError("harmonic index starts at 1")
    return np.array([abs(f.harmonics[k - 1]) for f in features], dtype=float)


def total_harmonic_distortion(features_or_harmonics) -> float:
    """THD of a current: sqrt(sum_{k>=2} |I_k|^2) / |I_1|.

    Accepts a single PeriodFeatures, a complex harmonic array, or a sequence
    of PeriodFeatures (median THD over periods). Returns inf when the
    fundamental vanishes.
    """
    if isinstance(features_or_harmonics, PeriodFeatures):
        h = features_or_harmonics.harmonics
    elif isinstance(features_or_harmonics, np.ndarray) and np.iscomplexobj(features_or_harmonics):
        h = features_or_harmonics
    else:
        vals = [total_harmonic_distortion(f) for f in features_or_harmonics]
        return float(np.median(vals))
    fundamental = abs(h[0])
    if fundamental < 1e-15:
        return float("inf")
    return float(np.sqrt(np.sum(np.abs(h[1:]) ** 2)) / fundamental)


def period_length(boundaries: np.ndarray, sample_rate: float) -> float:
    """Median period duration in seconds."""
    return float(np.median(np.diff(boundaries)) / sample_rate)
