"""Synthetic machine-scale load waveforms with exact per-load ground truth.

Load classes cover the population found in production machines: plain
two-state loads (heaters, constant-load motors, pumps), uncontrolled bridge
rectifier front ends (single- and three-phase), fixed-speed motors whose
mechanical load varies continuously, linear sine loads with a prescribed
harmonic content, and turn-on transients for fingerprinting experiments.

All generators are pure functions of their parameters; randomness enters only
through the scenario seed, so identical scenarios reproduce bit-identical
output.

Geometry of the rectifier models (voltage = sqrt(2)*V*sin(wt), one mains
period = 1 turn):

* single-phase: one raised-cosine current pulse per half-cycle, centered on
  the voltage extremum (phases 0.25 and 0.75), width = conduction_angle,
  sign following the half-cycle.
* three-phase line current: two raised-cosine humps per half-cycle centered
  30 electrical degrees either side of the extremum (phases 1/6, 1/3 and
  mirrored), width = conduction_angle (at most 60 degrees, where the humps
  touch). This reproduces the classic line-current signature: odd harmonics
  only, vanishing triplens, strong 5th/7th.

Current is exactly zero outside conduction windows, not merely small.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import CURRENT, VOLTAGE, SensorModel, Waveform, compute_period_features, segment_periods

TWO_STATE = "two_state"
UBR_SINGLE_PHASE = "ubr_single_phase"
UBR_THREE_PHASE = "ubr_three_phase"
FSM_VARYING = "fsm_varying"
LINEAR_SINE = "linear_sine"

LOAD_CLASSES = (TWO_STATE, UBR_SINGLE_PHASE, UBR_THREE_PHASE, FSM_VARYING, LINEAR_SINE)


@dataclass(frozen=True)
class Mains:
    v_rms: float = 230.0
    frequency: float = 50.0

    def __post_init__(self):
        if self.v_rms <= 0 or self.frequency <= 0:
            raise ValueError("mains voltage and frequency must be positive")


ScheduleT = Sequence[tuple[float, float]]


def validate_schedule(schedule: ScheduleT, duration: float | None = None) -> list[tuple[float, float]]:
    """Check (t_on, t_off) intervals are increasing and non-overlapping."""
    out = []
    prev_off = -np.inf
    for t_on, t_off in schedule:
        if not t_on < t_off:
            raise ValueError(f"interval ({t_on}, {t_off}) is not increasing")
        if t_on < prev_off:
            raise ValueError("schedule intervals overlap")
        if duration is not None and t_on >= duration:
            raise ValueError(f"interval starts at {t_on}s beyond duration {duration}s")
        out.append((float(t_on), float(t_off)))
        prev_off = t_off
    return out


def always_on(duration: float) -> list[tuple[float, float]]:
    return [(0.0, float(duration))]


def schedule_mask(schedule: ScheduleT, t: np.ndarray) -> np.ndarray:
    mask = np.zeros(t.shape, dtype=bool)
    for t_on, t_off in schedule:
        mask |= (t >= t_on) & (t < t_off)
    return mask


class PowerProfile:
    """Callable t -> W that also carries a JSON-serializable descriptor."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], spec: dict | None = None):
        self._fn = fn
        self.spec = spec

    def __call__(self, t):
        return self._fn(np.asarray(t, dtype=float))


def constant_profile(value: float) -> PowerProfile:
    return PowerProfile(lambda t: np.full_like(t, float(value)), {"kind": "constant", "value": value})


def ramp_profile(start: float, end: float, t0: float, t1: float) -> PowerProfile:
    def fn(t):
        frac = np.clip((t - t0) / (t1 - t0), 0.0, 1.0)
        return start + (end - start) * frac

    return PowerProfile(fn, {"kind": "ramp", "start": start, "end": end, "t0": t0, "t1": t1})


def random_walk_profile(
    low: float,
    high: float,
    duration: float,
    seed: int,
    step_s: float = 0.5,
    smooth_steps: int = 5,
) -> PowerProfile:
    """Band-limited random walk clipped to [low, high].

    A reflected Gaussian walk on a ``step_s`` grid, moving-average smoothed
    over ``smooth_steps`` knots, then linearly interpolated. Deterministic per
    seed.
    """
    if not low < high:
        raise ValueError("need low < high")
    rng = np.random.default_rng(seed)
    n = max(4, int(np.ceil(duration / step_s)) + 2 * smooth_steps)
    sigma = 0.15 * (high - low)
    walk = np.empty(n)
    walk[0] = rng.uniform(low + 0.2 * (high - low), high - 0.2 * (high - low))
    for k in range(1, n):
        nxt = walk[k - 1] + rng.normal(0.0, sigma)
        # reflect at the bounds
        while nxt < low or nxt > high:
            if nxt < low:
                nxt = 2 * low - nxt
            else:
                nxt = 2 * high - nxt
        walk[k] = nxt
    if smooth_steps > 1:
        kernel = np.ones(smooth_steps) / smooth_steps
        walk = np.convolve(walk, kernel, mode="same")
    walk = np.clip(walk, low, high)
    knots = np.arange(n) * step_s

    def fn(t):
        return np.interp(t, knots, walk)

    return PowerProfile(
        fn,
        {
            "kind": "random_walk",
            "low": low,
            "high": high,
            "seed": seed,
            "step_s": step_s,
            "smooth_steps": smooth_steps,
        },
    )


def profile_from_spec(spec: dict, duration: float) -> PowerProfile:
    kind = spec.get("kind")
    if kind == "constant":
        return constant_profile(spec["value"])
    if kind == "ramp":
        return ramp_profile(spec["start"], spec["end"], spec["t0"], spec["t1"])
    if kind == "random_walk":
        return random_walk_profile(
            spec["low"],
            spec["high"],
            duration,
            spec["seed"],
            spec.get("step_s", 0.5),
            spec.get("smooth_steps", 5),
        )
    raise ValueError(f"unknown profile kind {kind!r}")


# ---------------------------------------------------------------------------
# load parameter sets


@dataclass(frozen=True)
class TwoStateParams:
    """Constant-power load, sinusoidal current at a fixed power factor."""

    p_on: float
    power_factor: float = 1.0
    harmonic_spectrum: Mapping[int, complex] | None = None  # relative to fundamental

    def __post_init__(self):
        if self.p_on < 0:
            raise ValueError("p_on must be >= 0")
        if not 0 < self.power_factor <= 1:
            raise ValueError("power_factor must be in (0, 1]")
        if self.harmonic_spectrum:
            for k in self.harmonic_spectrum:
                if k < 2:
                    raise ValueError("harmonic_spectrum indices start at 2")


@dataclass(frozen=True)
class LinearSineParams:
    """Sinusoidal current given directly by peak amplitude and phase lag.

    ``harmonics`` maps harmonic index to an absolute complex peak amplitude
    in amperes (magnitude and phase relative to the voltage zero crossing).
    """

    amplitude: float
    phase_lag: float = 0.0
    harmonics: Mapping[int, complex] | None = None

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")


@dataclass(frozen=True)
class UbrParams:
    """Uncontrolled bridge rectifier front end.

    ``conduction_angle`` is the width of one current pulse in radians:
    at most pi/2 for single-phase, at most pi/3 for three-phase.
    ``power_profile`` optionally scales the per-period power over time
    (multiplier around 1.0).
    """

    p_mean: float
    conduction_angle: float
    power_profile: PowerProfile | Callable | None = None

    def __post_init__(self):
        if self.p_mean < 0:
            raise ValueError("p_mean must be >= 0")
        if not self.conduction_angle > 0:
            raise ValueError("conduction_angle must be positive")


@dataclass(frozen=True)
class FsmVaryingParams:
    """Fixed-speed motor with continuously varying mechanical load.

    The (step_dp, step_dq) switch-on step defines the motor's displacement
    power factor (phi = atan2(step_dq, step_dp)); the apparent step equals
    (step_dp, step_dq) when the power profile starts near step_dp. A current
    harmonic of index ``coupling_harmonic`` is injected with per-period peak
    amplitude ``coupling_slope * p(t) + coupling_intercept``.
    """

    p_base: float
    step_dp: float
    step_dq: float
    coupling_harmonic: int
    coupling_slope: float
    coupling_intercept: float = 0.0
    p_profile: PowerProfile | Callable | None = None
    coupling_phase: float = 0.0

    def __post_init__(self):
        if self.p_base < 0:
            raise ValueError("p_base must be >= 0")
        if self.coupling_slope == 0:
            raise ValueError("coupling_slope must be nonzero")
        if self.coupling_harmonic < 2:
            raise ValueError("coupling_harmonic must be >= 2")
        if self.step_dp <= 0:
            raise ValueError("step_dp must be positive")


@dataclass(frozen=True)
class TransientParams:
    """Turn-on transient of a fixed-speed motor.

    The envelope decays exponentially from ``peak_ratio * steady_amp`` to
    ``steady_amp`` with time constant ``tau``; an optional decaying envelope
    oscillation adds overshoot structure, and ``inrush_harmonics`` adds
    harmonic content proportional to the envelope excess (so the steady tail
    is a clean sine).
    """

    tau: float
    peak_ratio: float
    steady_amp: float
    duration: float = 2.0
    phase_lag: float = 0.6435011087932844  # acos(0.8)
    osc_amp: float = 0.0
    osc_freq: float = 0.0
    osc_tau: float = 0.1
    inrush_harmonics: Mapping[int, complex] | None = None

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.peak_ratio < 1:
            raise ValueError("peak_ratio must be >= 1")
        if self.steady_amp <= 0:
            raise ValueError("steady_amp must be positive")


@dataclass(frozen=True)
class LoadModel:
    id: str
    load_class: str
    params: object
    schedule: ScheduleT

    _PARAM_TYPES = {
        TWO_STATE: TwoStateParams,
        UBR_SINGLE_PHASE: UbrParams,
        UBR_THREE_PHASE: UbrParams,
        FSM_VARYING: FsmVaryingParams,
        LINEAR_SINE: LinearSineParams,
    }

    def __post_init__(self):
        if self.load_class not in LOAD_CLASSES:
            raise ValueError(f"unknown load class {self.load_class!r}")
        expected = self._PARAM_TYPES[self.load_class]
        if not isinstance(self.params, expected):
            raise TypeError(f"{self.load_class} load needs {expected.__name__} params")
        validate_schedule(self.schedule)


@dataclass(frozen=True)
class MachineScenario:
    """Full description of one simulated machine recording.

    ``noise_rms`` of None selects the default sensor-noise model
    (1 mA + 0.5 % of the clean aggregate RMS); 0 disables noise.
    """

    loads: Sequence[LoadModel]
    mains: Mains = Mains()
    duration: float = 10.0
    sample_rate: float = 10_000.0
    noise_rms: float | None = None
    sensor: SensorModel | None = None
    seed: int = 0

    def __post_init__(self):
        if self.duration <= 0 or self.sample_rate <= 0:
            raise ValueError("duration and sample_rate must be positive")
        if self.duration * self.sample_rate > 2e8:
            raise ValueError("scenario exceeds memory budget")
        if self.noise_rms is not None and self.noise_rms < 0:
            raise ValueError("noise_rms must be >= 0")
        ids = [l.id for l in self.loads]
        if len(set(ids)) != len(ids):
            raise ValueError("load ids must be unique")


@dataclass
class GroundTruth:
    """Exact per-load signals accompanying a simulated aggregate."""

    load_currents: dict[str, Waveform]
    load_power: dict[str, np.ndarray]  # per-period active power, W
    boundaries: np.ndarray
    t_period: float
    noise: np.ndarray
    pre_sensor_current: Waveform
    noise_rms: float


# ---------------------------------------------------------------------------
# generators


def mains_voltage(mains: Mains, sample_rate: float, duration: float) -> Waveform:
    t = np.arange(int(round(sample_rate * duration))) / sample_rate
    v = np.sqrt(2) * mains.v_rms * np.sin(2 * np.pi * mains.frequency * t)
    return Waveform(v, sample_rate, VOLTAGE)


def _time_axis(sample_rate: float, duration: float) -> np.ndarray:
    return np.arange(int(round(sample_rate * duration))) / sample_rate


def synth_two_state(
    params: TwoStateParams,
    schedule: ScheduleT,
    mains: Mains,
    sample_rate: float,
    duration: float,
) -> Waveform:
    """Sinusoidal current of constant power during on-intervals, zero otherwise."""
    schedule = validate_schedule(schedule, duration)
    t = _time_axis(sample_rate, duration)
    w = 2 * np.pi * mains.frequency
    phi = np.arccos(params.power_factor)
    amp = np.sqrt(2) * params.p_on / (params.power_factor * mains.v_rms)
    i = amp * np.sin(w * t - phi)
    if params.harmonic_spectrum:
        for k, coeff in params.harmonic_spectrum.items():
            c = complex(coeff) * amp
            i += abs(c) * np.sin(k * w * t + np.angle(c))
    i *= schedule_mask(schedule, t)
    return Waveform(i, sample_rate, CURRENT)


def synth_linear_sine(
    params: LinearSineParams,
    schedule: ScheduleT,
    mains: Mains,
    sample_rate: float,
    duration: float,
) -> Waveform:
    schedule = validate_schedule(schedule, duration)
    t = _time_axis(sample_rate, duration)
    w = 2 * np.pi * mains.frequency
    i = params.amplitude * np.sin(w * t - params.phase_lag)
    if params.harmonics:
        for k, coeff in params.harmonics.items():
            c = complex(coeff)
            i += abs(c) * np.sin(k * w * t + np.angle(c))
    i *= schedule_mask(schedule, t)
    return Waveform(i, sample_rate, CURRENT)


def _unit_pulse_train(theta: np.ndarray, centers: Sequence[float], width: float) -> np.ndarray:
    """Signed raised-cosine pulses at ``centers`` (turns), width in radians.

    Pulses in the first half-cycle are positive, in the second negative; the
    current is exactly zero outside the conduction windows.
    """
    train = np.zeros_like(theta)
    half_w = width / (4 * np.pi)  # half-width in turns
    frac = theta - np.floor(theta)
    for c in centers:
        sign = 1.0 if c < 0.5 else -1.0
        u = frac - c
        u -= np.round(u)  # wrap to [-0.5, 0.5)
        inside = np.abs(u) <= half_w
        train[inside] += sign * 0.5 * (1.0 + np.cos(np.pi * u[inside] / half_w))
    return train


_UBR_CENTERS = {
    "single": (0.25, 0.75),
    "three": (1.0 / 6.0, 1.0 / 3.0, 2.0 / 3.0, 5.0 / 6.0),
}

_UBR_MAX_ANGLE = {"single": np.pi / 2, "three": np.pi / 3}


def ubr_conduction_windows(
    kind: str,
    conduction_angle: float,
    mains: Mains,
    sample_rate: float,
    duration: float,
) -> list[tuple[int, int]]:
    """Exact per-pulse sample windows [begin, end] of the generated rectifier.

    Ground-truth oracle for the peak detector tests; windows are inclusive.
    """
    centers = _UBR_CENTERS[kind]
    period = sample_rate / mains.frequency
    half_w = conduction_angle / (4 * np.pi) * period
    n = int(round(sample_rate * duration))
    windows = []
    m = 0
    while True:
        base = m * period
        if base > n:
            break
        for c in centers:
            lo = base + c * period - half_w
            hi = base + c * period + half_w
            if hi < 0 or lo > n - 1:
                continue
            windows.append((int(np.ceil(lo)), int(np.floor(hi))))
        m += 1
    return windows


def synth_ubr(
    params: UbrParams,
    kind: str,
    schedule: ScheduleT,
    mains: Mains,
    sample_rate: float,
    duration: float,
) -> Waveform:
    """Uncontrolled bridge rectifier current: raised-cosine conduction pulses.

    Pulse amplitude is scaled per mains period so the period's active power
    equals ``p_mean`` times the power profile evaluated at the period center.
    """
    if kind not in ("single", "three"):
        raise ValueError("kind must be 'single' or 'three'")
    if params.conduction_angle > _UBR_MAX_ANGLE[kind] + 1e-12:
        raise ValueError(
            f"conduction_angle {params.conduction_angle:.3f} exceeds "
            f"{_UBR_MAX_ANGLE[kind]:.3f} for {kind}-phase"
        )
    schedule = validate_schedule(schedule, duration)
    t = _time_axis(sample_rate, duration)
    f = mains.frequency
    theta = f * t  # turns
    train = _unit_pulse_train(theta, _UBR_CENTERS[kind], params.conduction_angle)

    # power of the unit train against the mains sine, via one dense period
    dense = np.linspace(0.0, 1.0, 4096, endpoint=False)
    unit = _unit_pulse_train(dense, _UBR_CENTERS[kind], params.conduction_angle)
    v_dense = np.sqrt(2) * mains.v_rms * np.sin(2 * np.pi * dense)
    p_unit = float(np.mean(v_dense * unit))
    if p_unit <= 0:
        raise ValueError("degenerate pulse geometry")

    period_idx = np.floor(theta).astype(int)
    if params.power_profile is not None:
        centers_t = (period_idx + 0.5) / f
        target = params.p_mean * np.asarray(params.power_profile(centers_t), dtype=float)
    else:
        target = np.full(t.shape, params.p_mean)
    i = train * (target / p_unit)
    i *= schedule_mask(schedule, t)
    return Waveform(i, sample_rate, CURRENT)


def synth_fsm_varying(
    params: FsmVaryingParams,
    schedule: ScheduleT,
    mains: Mains,
    sample_rate: float,
    duration: float,
) -> Waveform:
    """Motor current whose fundamental tracks p(t) plus a coupled harmonic.

    The injected harmonic's per-period peak amplitude is
    ``coupling_slope * p(t) + coupling_intercept``; it carries no active power
    against a sinusoidal mains voltage, so per-period power still equals p(t).
    """
    schedule = validate_schedule(schedule, duration)
    t = _time_axis(sample_rate, duration)
    w = 2 * np.pi * mains.frequency
    profile = params.p_profile or constant_profile(params.p_base)
    p_t = np.asarray(profile(t), dtype=float)
    if np.any(p_t < 0):
        raise ValueError("power profile must be nonnegative")

    phi = np.arctan2(params.step_dq, params.step_dp)
    pf = np.cos(phi)
    amp = np.sqrt(2) * p_t / (pf * mains.v_rms)
    i = amp * np.sin(w * t - phi)

    hx = params.coupling_slope * p_t + params.coupling_intercept
    if np.any(hx < 0):
        raise ValueError("coupling must keep the harmonic amplitude nonnegative")
    i += hx * np.sin(params.coupling_harmonic * w * t + params.coupling_phase)
    i *= schedule_mask(schedule, t)
    return Waveform(i, sample_rate, CURRENT)


def synth_transient(
    params: TransientParams,
    mains: Mains,
    sample_rate: float,
    rng: np.random.Generator | None = None,
    jitter: float = 0.0,
) -> Waveform:
    """Turn-on transient current of one motor.

    Deterministic per parameter set; with ``rng`` and ``jitter`` > 0 the shape
    parameters are perturbed uniformly by up to +-jitter (relative) to mimic
    event-to-event variation of a real machine.
    """
    tau = params.tau
    peak_ratio = params.peak_ratio
    osc_amp = params.osc_amp
    inrush = dict(params.inrush_harmonics or {})
    if rng is not None and jitter > 0:
        j = lambda v: v * (1.0 + rng.uniform(-jitter, jitter))
        tau = j(tau)
        peak_ratio = max(1.0, j(peak_ratio))
        osc_amp = j(osc_amp)
        inrush = {k: c * (1.0 + rng.uniform(-jitter, jitter)) for k, c in inrush.items()}

    t = _time_axis(sample_rate, params.duration)
    w = 2 * np.pi * mains.frequency
    excess = (peak_ratio - 1.0) * np.exp(-t / tau)
    env = 1.0 + excess
    if osc_amp > 0 and params.osc_freq > 0:
        env += osc_amp * np.exp(-t / params.osc_tau) * np.sin(2 * np.pi * params.osc_freq * t)
    i = env * np.sin(w * t - params.phase_lag)
    for k, coeff in inrush.items():
        c = complex(coeff)
        i += abs(c) * excess * np.sin(k * w * t + np.angle(c))
    return Waveform(params.steady_amp * i, sample_rate, CURRENT)


_SYNTH_DISPATCH = {
    TWO_STATE: lambda l, m, fs, d: synth_two_state(l.params, l.schedule, m, fs, d),
    LINEAR_SINE: lambda l, m, fs, d: synth_linear_sine(l.params, l.schedule, m, fs, d),
    UBR_SINGLE_PHASE: lambda l, m, fs, d: synth_ubr(l.params, "single", l.schedule, m, fs, d),
    UBR_THREE_PHASE: lambda l, m, fs, d: synth_ubr(l.params, "three", l.schedule, m, fs, d),
    FSM_VARYING: lambda l, m, fs, d: synth_fsm_varying(l.params, l.schedule, m, fs, d),
}


def synth_load(load: LoadModel, mains: Mains, sample_rate: float, duration: float) -> Waveform:
    return _SYNTH_DISPATCH[load.load_class](load, mains, sample_rate, duration)


def compose_machine(scenario: MachineScenario) -> tuple[Waveform, Waveform, GroundTruth]:
    """Aggregate (current, voltage, ground truth) for a scenario.

    The aggregate current is the sample-wise sum of the per-load currents plus
    white Gaussian noise, then the sensor model when one is configured. Ground
    truth holds the exact pre-noise per-load currents and their per-period
    active power computed against the same voltage segmentation used
    downstream.
    """
    fs, dur, mains = scenario.sample_rate, scenario.duration, scenario.mains
    voltage = mains_voltage(mains, fs, dur)
    n = len(voltage)

    load_currents: dict[str, Waveform] = {}
    total = np.zeros(n)
    for load in scenario.loads:
        wave = synth_load(load, mains, fs, dur)
        load_currents[load.id] = wave
        total = total + wave.samples

    rng = np.random.default_rng(scenario.seed)
    if scenario.noise_rms is None:
        clean_rms = float(np.sqrt(np.mean(total**2))) if scenario.loads else 0.0
        noise_rms = 1e-3 + 0.005 * clean_rms
    else:
        noise_rms = float(scenario.noise_rms)
    noise = rng.normal(0.0, noise_rms, n) if noise_rms > 0 else np.zeros(n)

    pre_sensor = Waveform(total + noise, fs, CURRENT)
    if scenario.sensor is not None:
        from .core import apply_sensor_model

        aggregate = apply_sensor_model(pre_sensor, scenario.sensor)
    else:
        aggregate = pre_sensor

    boundaries = segment_periods(voltage, mains.frequency)
    t_period = float(np.median(np.diff(boundaries)) / fs)
    load_power = {
        lid: np.array(
            [f.p for f in compute_period_features(wave, voltage, boundaries, harmonic_count=1)]
        )
        for lid, wave in load_currents.items()
    }

    truth = GroundTruth(
        load_currents=load_currents,
        load_power=load_power,
        boundaries=boundaries,
        t_period=t_period,
        noise=noise,
        pre_sensor_current=pre_sensor,
        noise_rms=noise_rms,
    )
    return aggregate, voltage, truth
