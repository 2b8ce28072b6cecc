import numpy as np
import pytest

from wattsplit.core import compute_period_features, feature_series, harmonic_magnitudes, segment_periods
from wattsplit.simulate import (
    FSM_VARYING,
    TWO_STATE,
    UBR_SINGLE_PHASE,
    UBR_THREE_PHASE,
    FsmVaryingParams,
    LinearSineParams,
    LoadModel,
    MachineScenario,
    Mains,
    TransientParams,
    TwoStateParams,
    UbrParams,
    always_on,
    compose_machine,
    mains_voltage,
    ramp_profile,
    random_walk_profile,
    synth_fsm_varying,
    synth_linear_sine,
    synth_transient,
    synth_two_state,
    synth_ubr,
    ubr_conduction_windows,
    validate_schedule,
)

FS = 10_000.0
MAINS = Mains(v_rms=230.0, frequency=50.0)


def _features(current, duration=None, harmonic_count=20):
    dur = duration if duration is not None else len(current) / FS
    v = mains_voltage(MAINS, FS, dur)
    b = segment_periods(v, MAINS.frequency)
    return compute_period_features(current, v, b, harmonic_count=harmonic_count), b


def quadrature_harmonics(i, freq, sample_rate, k_max):
    """Independent oracle: trapezoid quadrature of i(t)*exp(-jkwt) over whole periods."""
    period = sample_rate / freq
    n_per = int(np.floor(len(i) / period))
    n = int(round(n_per * period))
    t = np.arange(n) / sample_rate
    out = np.zeros(k_max, dtype=complex)
    for k in range(1, k_max + 1):
        integrand = i[:n] * np.exp(-1j * 2 * np.pi * k * freq * t)
        out[k - 1] = 2.0 * np.trapezoid(integrand, dx=1 / sample_rate) / (n / sample_rate)
    return out


class TestSchedule:
    def test_overlap_rejected(self):
        with pytest.raises(ValueError):
            validate_schedule([(0, 5), (4, 8)])

    def test_decreasing_rejected(self):
        with pytest.raises(ValueError):
            validate_schedule([(5, 2)])


class TestTwoState:
    def test_resistive_load(self):
        i = synth_two_state(TwoStateParams(2000.0, 1.0), always_on(1.0), MAINS, FS, 1.0)
        feats, _ = self._check(i)
        p = feature_series(feats, "p")
        q = feature_series(feats, "q")
        assert np.allclose(p, 2000.0, rtol=1e-6)
        assert np.allclose(q, 0.0, atol=1e-6)

    def test_lagging_load(self):
        i = synth_two_state(TwoStateParams(1000.0, 0.8), always_on(1.0), MAINS, FS, 1.0)
        feats, _ = self._check(i)
        p = feature_series(feats, "p")
        q = feature_series(feats, "q")
        assert np.allclose(p, 1000.0, rtol=1e-6)
        assert np.allclose(q, 750.0, rtol=1e-6)  # q = p * tan(acos(0.8))

    def test_step_schedule(self):
        i = synth_two_state(TwoStateParams(1500.0, 1.0), [(1.0, 2.0)], MAINS, FS, 2.0)
        feats, b = self._check(i, duration=2.0)
        p = feature_series(feats, "p")
        switch_period = int(np.searchsorted(b / FS, 1.0)) - 1
        assert np.allclose(p[: switch_period - 1], 0.0, atol=1e-9)
        assert np.allclose(p[switch_period + 1 :], 1500.0, rtol=0.01)

    def test_power_within_1pct(self):
        params = TwoStateParams(800.0, 0.9, harmonic_spectrum={3: 0.2 * np.exp(1j * 0.5)})
        i = synth_two_state(params, always_on(1.0), MAINS, FS, 1.0)
        feats, _ = self._check(i)
        assert np.allclose(feature_series(feats, "p"), 800.0, rtol=0.01)

    def _check(self, i, duration=1.0):
        return _features(i, duration)


class TestLinearSine:
    def test_harmonic_injection(self):
        params = LinearSineParams(10.0, 0.3, harmonics={5: 2.0 * np.exp(1j * 1.0)})
        i = synth_linear_sine(params, always_on(1.0), MAINS, FS, 1.0)
        feats, _ = _features(i)
        assert np.allclose(harmonic_magnitudes(feats, 1), 10.0, rtol=1e-6)
        assert np.allclose(harmonic_magnitudes(feats, 5), 2.0, rtol=1e-6)


class TestUbr:
    def test_single_phase_pulse_count_and_zeros(self):
        params = UbrParams(500.0, 0.5)
        i = synth_ubr(params, "single", always_on(1.0), MAINS, FS, 1.0)
        # current identically zero on more than half the samples
        assert np.mean(i.samples == 0.0) > 0.5
        windows = ubr_conduction_windows("single", 0.5, MAINS, FS, 1.0)
        assert len(windows) == 100  # 2 pulses per 20 ms period
        outside = np.ones(len(i), dtype=bool)
        for lo, hi in windows:
            outside[lo : hi + 1] = False
        assert np.all(i.samples[outside] == 0.0)
        assert np.any(i.samples != 0.0)

    def test_per_period_power(self):
        params = UbrParams(500.0, 0.5)
        i = synth_ubr(params, "single", always_on(1.0), MAINS, FS, 1.0)
        feats, _ = _features(i)
        assert np.allclose(feature_series(feats, "p"), 500.0, rtol=0.02)

    def test_three_phase_power_and_windows(self):
        params = UbrParams(700.0, 0.4)
        i = synth_ubr(params, "three", always_on(1.0), MAINS, FS, 1.0)
        feats, _ = _features(i)
        assert np.allclose(feature_series(feats, "p"), 700.0, rtol=0.02)
        windows = ubr_conduction_windows("three", 0.4, MAINS, FS, 1.0)
        assert len(windows) == 200  # 4 pulses per period

    def test_three_phase_harmonic_signature(self):
        # classic six-pulse line current: odd non-triplen harmonics only
        params = UbrParams(700.0, 0.4)
        i = synth_ubr(params, "three", always_on(1.0), MAINS, FS, 1.0)
        h = np.abs(quadrature_harmonics(i.samples, MAINS.frequency, FS, 10))
        fund = h[0]
        assert fund > 0
        # cancellation is exact in continuous time; the sampled quadrature
        # leaves O(1e-4) relative residue
        for k in (2, 4, 6, 8):  # even
            assert h[k - 1] < 1e-3 * fund
        for k in (3, 9):  # triplen
            assert h[k - 1] < 1e-3 * fund
        assert h[4] / fund > 0.3  # strong 5th
        assert h[6] / fund > 0.2  # strong 7th

    def test_thd_decreases_with_conduction_angle(self):
        thds = []
        for angle in (0.2, 0.5, 0.8, 1.1, 1.4):
            i = synth_ubr(UbrParams(500.0, angle), "single", always_on(0.4), MAINS, FS, 0.4)
            h = np.abs(quadrature_harmonics(i.samples, MAINS.frequency, FS, 40))
            thds.append(np.sqrt(np.sum(h[1:] ** 2)) / h[0])
        assert all(a > b for a, b in zip(thds, thds[1:]))

    def test_angle_domain_enforced(self):
        with pytest.raises(ValueError):
            synth_ubr(UbrParams(500.0, 1.2), "three", always_on(1.0), MAINS, FS, 1.0)
        with pytest.raises(ValueError):
            synth_ubr(UbrParams(500.0, 1.7), "single", always_on(1.0), MAINS, FS, 1.0)

    def test_time_varying_power(self):
        profile = ramp_profile(0.8, 1.2, 0.0, 2.0)
        params = UbrParams(500.0, 0.5, power_profile=profile)
        i = synth_ubr(params, "single", always_on(2.0), MAINS, FS, 2.0)
        feats, b = _features(i, 2.0)
        p = feature_series(feats, "p")
        centers = (b[:-1] + b[1:]) / 2 / FS
        assert np.allclose(p, 500.0 * profile(centers), rtol=0.02)


class TestFsmVarying:
    PARAMS = dict(
        p_base=750.0,
        step_dp=600.0,
        step_dq=450.0,
        coupling_harmonic=8,
        coupling_slope=0.001,
        coupling_intercept=0.1,
    )

    def test_constant_profile_harmonic_amplitude(self):
        params = FsmVaryingParams(**self.PARAMS)
        i = synth_fsm_varying(params, always_on(1.0), MAINS, FS, 1.0)
        feats, _ = _features(i)
        expect = 0.001 * 750.0 + 0.1
        assert np.allclose(harmonic_magnitudes(feats, 8), expect, rtol=1e-3)
        assert np.allclose(feature_series(feats, "p"), 750.0, rtol=1e-3)

    def test_ramp_correlates(self):
        # oracle: direct Pearson correlation on generated per-period features
        profile = ramp_profile(600.0, 950.0, 0.0, 60.0)
        params = FsmVaryingParams(**{**self.PARAMS, "p_profile": profile})
        i = synth_fsm_varying(params, always_on(60.0), MAINS, FS, 60.0)
        feats, _ = _features(i, 60.0)
        p = feature_series(feats, "p")
        h8 = harmonic_magnitudes(feats, 8)
        r = np.corrcoef(h8, p)[0, 1]
        assert r > 0.999

    def test_zero_slope_forbidden(self):
        with pytest.raises(ValueError):
            FsmVaryingParams(**{**self.PARAMS, "coupling_slope": 0.0})

    def test_power_factor_from_step(self):
        params = FsmVaryingParams(**self.PARAMS)
        i = synth_fsm_varying(params, always_on(1.0), MAINS, FS, 1.0)
        feats, _ = _features(i)
        q = feature_series(feats, "q")
        # phi = atan2(450, 600) -> q/p = 0.75
        assert np.allclose(q / feature_series(feats, "p"), 0.75, rtol=1e-3)


class TestTransient:
    def test_flat_envelope(self):
        params = TransientParams(tau=0.1, peak_ratio=1.0, steady_amp=2.0, duration=1.0)
        i = synth_transient(params, MAINS, FS)
        env = _envelope(i.samples)
        assert np.allclose(env, 2.0, rtol=0.01)

    def test_exponential_decay_value(self):
        params = TransientParams(tau=0.1, peak_ratio=6.0, steady_amp=1.0, duration=1.5)
        i = synth_transient(params, MAINS, FS)
        # envelope at t = tau is steady * (1 + 5/e)
        k = int(0.1 * FS)
        window = np.abs(i.samples[k - 100 : k + 100])
        assert abs(window.max() - (1 + 5 * np.exp(-1))) < 0.1

    def test_tau_recovered_by_log_linear_fit(self):
        # oracle: log-linear fit of the generated envelope excess
        taus = {}
        for tau in (0.10, 0.12):
            params = TransientParams(tau=tau, peak_ratio=5.0, steady_amp=1.0, duration=1.5)
            i = synth_transient(params, MAINS, FS)
            env = _envelope(i.samples)
            t_env = (np.arange(env.size) + 0.5) * 0.01  # half-period hop
            excess = env - 1.0
            sel = excess > 0.05 * (env.max() - 1.0)
            slope, _ = np.polyfit(t_env[sel], np.log(excess[sel]), 1)
            taus[tau] = -1.0 / slope
        for tau, fitted in taus.items():
            assert abs(fitted - tau) / tau < 0.05
        ratio = taus[0.12] / taus[0.10]
        assert abs(ratio - 1.2) < 0.05

    def test_jitter_deterministic_with_seed(self):
        params = TransientParams(tau=0.1, peak_ratio=4.0, steady_amp=1.0)
        a = synth_transient(params, MAINS, FS, rng=np.random.default_rng(7), jitter=0.05)
        b = synth_transient(params, MAINS, FS, rng=np.random.default_rng(7), jitter=0.05)
        assert np.array_equal(a.samples, b.samples)


def _envelope(samples, period=200):
    n = samples.size // (period // 2)
    return np.array([np.abs(samples[k * period // 2 : (k + 1) * period // 2]).max() for k in range(n)])


class TestComposeMachine:
    def _scenario(self, noise=0.0, seed=3):
        loads = [
            LoadModel("heater", TWO_STATE, TwoStateParams(2000.0, 1.0), [(0.2, 1.8)]),
            LoadModel("vsd", UBR_THREE_PHASE, UbrParams(600.0, 0.45), always_on(2.0)),
        ]
        return MachineScenario(loads=loads, mains=MAINS, duration=2.0, sample_rate=FS, noise_rms=noise, seed=seed)

    def test_superposition_exact(self):
        scenario = self._scenario(noise=0.02)
        aggregate, _, truth = compose_machine(scenario)
        stack = np.array([truth.load_currents[l.id].samples for l in scenario.loads])
        recombined = np.sum(stack, axis=0) + truth.noise
        assert np.array_equal(truth.pre_sensor_current.samples, recombined)
        assert np.array_equal(aggregate.samples, truth.pre_sensor_current.samples)

    def test_empty_scenario_is_silent(self):
        scenario = MachineScenario(loads=[], duration=1.0, sample_rate=FS, noise_rms=0.0)
        aggregate, _, truth = compose_machine(scenario)
        assert np.all(aggregate.samples == 0.0)

    def test_deterministic_per_seed(self):
        a, _, _ = compose_machine(self._scenario(noise=0.05, seed=11))
        b, _, _ = compose_machine(self._scenario(noise=0.05, seed=11))
        c, _, _ = compose_machine(self._scenario(noise=0.05, seed=12))
        assert np.array_equal(a.samples, b.samples)
        assert not np.array_equal(a.samples, c.samples)

    def test_truth_power_energy(self):
        scenario = self._scenario()
        _, _, truth = compose_machine(scenario)
        # heater on for 1.6 s at 2 kW
        e_heater = np.sum(truth.load_power["heater"]) * truth.t_period
        assert abs(e_heater - 2000.0 * 1.6) < 0.02 * 2000.0 * 1.6
        e_vsd = np.sum(truth.load_power["vsd"]) * truth.t_period
        expected = 600.0 * (len(truth.load_power["vsd"]) * truth.t_period)
        assert abs(e_vsd - expected) < 0.02 * expected

    def test_auto_noise_default(self):
        scenario = MachineScenario(
            loads=[LoadModel("m", TWO_STATE, TwoStateParams(1000.0, 0.9), always_on(1.0))],
            duration=1.0,
            sample_rate=FS,
            noise_rms=None,
        )
        _, _, truth = compose_machine(scenario)
        i_rms = 1000.0 / (0.9 * 230.0)
        expected = 1e-3 + 0.005 * i_rms
        assert abs(truth.noise_rms - expected) / expected < 0.05

    def test_duplicate_ids_rejected(self):
        l = LoadModel("x", TWO_STATE, TwoStateParams(100.0), always_on(1.0))
        with pytest.raises(ValueError):
            MachineScenario(loads=[l, l], duration=1.0, sample_rate=FS)


def test_random_walk_profile_bounds_and_determinism():
    p1 = random_walk_profile(600.0, 950.0, 60.0, seed=5)
    p2 = random_walk_profile(600.0, 950.0, 60.0, seed=5)
    t = np.linspace(0, 60, 2000)
    assert np.array_equal(p1(t), p2(t))
    assert np.all(p1(t) >= 600.0) and np.all(p1(t) <= 950.0)
    # the walk should actually move around
    assert p1(t).std() > 10.0
