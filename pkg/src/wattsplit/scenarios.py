"""Canonical machine scenarios used by the demos and the validation suite.

Two full-machine analogs mirror typical production equipment:

* a packaging (thermoform-style) machine: cycling heater, a vacuum-pump
  motor whose power wanders between 600 and 950 W, one three-phase and one
  single-phase rectifier front end, a small cycling cooling device and a few
  tiny loads that stay below the event threshold;
* a milling-style machine dominated by a variable-power three-phase
  rectifier drive plus small pumps and a fan.

Both ship with default noise (1 mA + 0.5 % of the aggregate RMS) and exact
per-load ground truth via :func:`wattsplit.simulate.compose_machine`.
"""

from __future__ import annotations

import numpy as np

from .simulate import (
    FSM_VARYING,
    LINEAR_SINE,
    TWO_STATE,
    UBR_SINGLE_PHASE,
    UBR_THREE_PHASE,
    FsmVaryingParams,
    LinearSineParams,
    LoadModel,
    MachineScenario,
    Mains,
    TwoStateParams,
    UbrParams,
    always_on,
    random_walk_profile,
    synth_ubr,
)

MAINS = Mains(v_rms=230.0, frequency=50.0)


def thermoform_scenario(
    duration: float = 180.0,
    sample_rate: float = 10_000.0,
    seed: int = 11,
    noise_rms: float | None = None,
) -> MachineScenario:
    """Packaging-machine analog with a varying vacuum-pump motor."""
    t_end = duration
    heater_schedule = _cycle(8.0, on=22.0, off=14.0, t_end=t_end - 6.0)
    cooling_schedule = _cycle(15.0, on=30.0, off=25.0, t_end=t_end - 8.0)
    motor_schedule = [(10.0, 0.55 * t_end), (0.62 * t_end, t_end - 10.0)]

    loads = [
        LoadModel(
            "heater",
            TWO_STATE,
            TwoStateParams(p_on=2000.0, power_factor=1.0),
            heater_schedule,
        ),
        LoadModel(
            "cooling_device",
            TWO_STATE,
            TwoStateParams(p_on=320.0, power_factor=0.82),
            cooling_schedule,
        ),
        LoadModel(
            "vacuum_pump_motor",
            FSM_VARYING,
            FsmVaryingParams(
                p_base=750.0,
                step_dp=620.0,
                step_dq=470.0,
                coupling_harmonic=8,
                coupling_slope=0.0012,
                coupling_intercept=0.15,
                p_profile=random_walk_profile(600.0, 950.0, duration, seed=seed + 1),
            ),
            motor_schedule,
        ),
        # conduction windows must not overlap the single-phase pulse at the
        # voltage extremum: the peel method cannot split shared windows
        LoadModel(
            "drive_3ph",
            UBR_THREE_PHASE,
            UbrParams(p_mean=420.0, conduction_angle=0.30),
            [(4.0, t_end - 4.0)],
        ),
        LoadModel(
            "supply_1ph",
            UBR_SINGLE_PHASE,
            UbrParams(p_mean=260.0, conduction_angle=0.28),
            [(2.0, t_end - 2.0)],
        ),
        # small loads below the 50 W event threshold: they belong to "rest"
        LoadModel(
            "winding_motor",
            TWO_STATE,
            TwoStateParams(p_on=38.0, power_factor=0.75),
            _cycle(5.0, on=12.0, off=9.0, t_end=t_end - 5.0),
        ),
        LoadModel(
            "conveyor",
            TWO_STATE,
            TwoStateParams(p_on=30.0, power_factor=0.8),
            _cycle(9.0, on=18.0, off=13.0, t_end=t_end - 5.0),
        ),
        LoadModel(
            "dc_supply",
            TWO_STATE,
            TwoStateParams(p_on=25.0, power_factor=0.95),
            always_on(t_end),
        ),
    ]
    return MachineScenario(
        loads=loads,
        mains=MAINS,
        duration=duration,
        sample_rate=sample_rate,
        noise_rms=noise_rms,
        seed=seed,
    )


def milling_scenario(
    duration: float = 180.0,
    sample_rate: float = 10_000.0,
    seed: int = 23,
    noise_rms: float | None = None,
) -> MachineScenario:
    """Milling-machine analog dominated by a variable-power rectifier drive."""
    t_end = duration
    loads = [
        LoadModel(
            "spindle_drive",
            UBR_THREE_PHASE,
            UbrParams(
                p_mean=900.0,
                conduction_angle=0.45,
                power_profile=random_walk_profile(0.75, 1.3, duration, seed=seed + 3),
            ),
            [(3.0, t_end - 3.0)],
        ),
        LoadModel(
            "spindle_fan",
            TWO_STATE,
            TwoStateParams(p_on=180.0, power_factor=0.78),
            _cycle(6.0, on=40.0, off=18.0, t_end=t_end - 6.0),
        ),
        LoadModel(
            "coolant_pump",
            TWO_STATE,
            TwoStateParams(p_on=90.0, power_factor=0.8),
            _cycle(20.0, on=15.0, off=20.0, t_end=t_end - 10.0),
        ),
        LoadModel(
            "hydraulic_pump",
            TWO_STATE,
            TwoStateParams(p_on=450.0, power_factor=0.85),
            _cycle(30.0, on=8.0, off=35.0, t_end=t_end - 10.0),
        ),
        LoadModel(
            "electronics",
            TWO_STATE,
            TwoStateParams(p_on=35.0, power_factor=0.9),
            always_on(t_end),
        ),
    ]
    return MachineScenario(
        loads=loads,
        mains=MAINS,
        duration=duration,
        sample_rate=sample_rate,
        noise_rms=noise_rms,
        seed=seed,
    )


def ubr_sine_scenario(
    kind: str,
    conduction_angle: float,
    p_mean: float = 500.0,
    duration: float = 5.0,
    sample_rate: float = 10_000.0,
    sine_peak_ratio: float = 2.0,
    noise_rms: float = 0.0,
    seed: int = 0,
) -> MachineScenario:
    """One rectifier plus a linear sine of ``sine_peak_ratio`` times its peak."""
    load_class = UBR_SINGLE_PHASE if kind == "single" else UBR_THREE_PHASE
    params = UbrParams(p_mean=p_mean, conduction_angle=conduction_angle)
    probe = synth_ubr(params, kind, always_on(duration), MAINS, sample_rate, duration)
    peak = float(np.abs(probe.samples).max())
    loads = [
        LoadModel("rectifier", load_class, params, always_on(duration)),
        LoadModel(
            "linear_load",
            LINEAR_SINE,
            LinearSineParams(amplitude=sine_peak_ratio * peak, phase_lag=0.3),
            always_on(duration),
        ),
    ]
    return MachineScenario(
        loads=loads,
        mains=MAINS,
        duration=duration,
        sample_rate=sample_rate,
        noise_rms=noise_rms,
        seed=seed,
    )


def dual_rectifier_scenario(
    duration: float = 5.0,
    sample_rate: float = 10_000.0,
    noise_rms: float = 0.0,
    seed: int = 0,
) -> MachineScenario:
    """A three-phase and a single-phase rectifier on one feed."""
    loads = [
        LoadModel(
            "drive_3ph",
            UBR_THREE_PHASE,
            UbrParams(p_mean=800.0, conduction_angle=0.35),
            always_on(duration),
        ),
        LoadModel(
            "supply_1ph",
            UBR_SINGLE_PHASE,
            UbrParams(p_mean=400.0, conduction_angle=0.35),
            always_on(duration),
        ),
    ]
    return MachineScenario(
        loads=loads,
        mains=MAINS,
        duration=duration,
        sample_rate=sample_rate,
        noise_rms=noise_rms,
        seed=seed,
    )


def random_two_state_scenario(
    rng: np.random.Generator,
    n_loads: int = 4,
    duration: float = 12.0,
    sample_rate: float = 5_000.0,
    rel_tol: float = 0.1,
    abs_tol_w: float = 30.0,
) -> MachineScenario:
    """Random two-state machine with switch times on period boundaries.

    Power levels are drawn pairwise separated by more than twice the cluster
    tolerance and every switch instant is at least 8 periods from any other,
    so the event method must recover schedules exactly.
    """
    t_period = 1.0 / MAINS.frequency
    n_periods = int(duration / t_period)
    levels: list[float] = []
    while len(levels) < n_loads:
        cand = float(rng.uniform(200.0, 4000.0))
        if all(
            abs(cand - lv) > 2 * max(rel_tol * max(cand, lv), abs_tol_w) + 50.0
            for lv in levels
        ):
            levels.append(cand)
    slots = np.arange(10, n_periods - 10, 8)
    picks = np.sort(rng.choice(slots, size=2 * n_loads, replace=False))
    loads = []
    for i, level in enumerate(levels):
        a = float(picks[2 * i] * t_period)
        b = float(picks[2 * i + 1] * t_period)
        pf = float(rng.uniform(0.7, 1.0))
        loads.append(
            LoadModel(f"load{i}", TWO_STATE, TwoStateParams(p_on=level, power_factor=pf), [(a, b)])
        )
    return MachineScenario(
        loads=loads,
        mains=MAINS,
        duration=duration,
        sample_rate=sample_rate,
        noise_rms=0.0,
        seed=int(rng.integers(0, 2**31)),
    )


def _cycle(t0: float, on: float, off: float, t_end: float) -> list[tuple[float, float]]:
    """Periodic on/off schedule from t0 to t_end."""
    out = []
    t = t0
    while t + on <= t_end:
        out.append((t, t + on))
        t += on + off
    return out
