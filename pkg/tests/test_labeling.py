import numpy as np
import pytest

from wattsplit.core import compute_period_features, segment_periods
from wattsplit.errors import ClassCollisionWarning, ClassTooSmall, InsufficientData, NoSteadyState
from wattsplit.labeling import (
    ELECTRONIC_LIKE,
    MOTOR_LIKE,
    RESISTIVE_LIKE,
    FingerprintModel,
    classify_fingerprint,
    extract_event_transient,
    extract_transient_features,
    macro_f1,
    make_motor_bank,
    mechanical_grouping_experiment,
    motor_bank_features,
    power_factor_label,
    train_fingerprint,
)
from wattsplit.simulate import (
    Mains,
    TransientParams,
    TwoStateParams,
    UbrParams,
    always_on,
    mains_voltage,
    synth_transient,
    synth_two_state,
    synth_ubr,
)

FS = 10_000.0
MAINS = Mains()


def features_of(current, duration):
    v = mains_voltage(MAINS, FS, duration)
    b = segment_periods(v, MAINS.frequency)
    return compute_period_features(current, v, b, harmonic_count=20)


class TestPowerFactorLabel:
    def test_heater_resistive(self):
        i = synth_two_state(TwoStateParams(2000.0, 1.0), always_on(1.0), MAINS, FS, 1.0)
        assert power_factor_label(features_of(i, 1.0)) == RESISTIVE_LIKE

    def test_motor(self):
        i = synth_two_state(TwoStateParams(1000.0, 0.8), always_on(1.0), MAINS, FS, 1.0)
        assert power_factor_label(features_of(i, 1.0)) == MOTOR_LIKE

    def test_rectifier_electronic(self):
        i = synth_ubr(UbrParams(500.0, 0.5), "single", always_on(1.0), MAINS, FS, 1.0)
        assert power_factor_label(features_of(i, 1.0)) == ELECTRONIC_LIKE

    def test_insufficient_data(self):
        i = synth_two_state(TwoStateParams(100.0, 1.0), always_on(1.0), MAINS, FS, 1.0)
        with pytest.raises(InsufficientData):
            power_factor_label(features_of(i, 1.0)[:5])


class TestTransientFeatures:
    def test_decay_constant_recovered(self):
        params = TransientParams(tau=0.1, peak_ratio=6.0, steady_amp=2.0, duration=1.5)
        wave = synth_transient(params, MAINS, FS)
        feats = extract_transient_features(wave, steady_amp=2.0)
        assert abs(feats.decay_tau_s - 0.1) / 0.1 < 0.05
        # the half-period envelope sampling lags the instantaneous peak a bit
        assert 5.3 < feats.peak_ratio <= 6.05

    def test_no_transient_flat_features(self):
        params = TransientParams(tau=0.05, peak_ratio=1.0, steady_amp=1.0, duration=1.0)
        feats = extract_transient_features(synth_transient(params, MAINS, FS), 1.0)
        assert feats.peak_ratio == pytest.approx(1.0, abs=0.02)
        assert feats.decay_tau_s == 0.0
        assert feats.settle_time_s < 0.05

    def test_scaling_invariance(self):
        params = TransientParams(tau=0.08, peak_ratio=4.0, steady_amp=1.0, duration=1.2,
                                 inrush_harmonics={3: 0.1})
        w1 = synth_transient(params, MAINS, FS)
        w10 = w1.with_samples(10.0 * w1.samples)
        f1 = extract_transient_features(w1, 1.0)
        f10 = extract_transient_features(w10, 10.0)
        assert np.allclose(f1.as_array(), f10.as_array(), rtol=1e-9, atol=1e-12)

    def test_tau_difference_visible(self):
        feats = {}
        for tau in (0.10, 0.12):
            params = TransientParams(tau=tau, peak_ratio=5.0, steady_amp=1.0, duration=1.5)
            feats[tau] = extract_transient_features(synth_transient(params, MAINS, FS), 1.0)
        ratio = feats[0.12].decay_tau_s / feats[0.10].decay_tau_s
        assert abs(ratio - 1.2) < 0.06

    def test_never_settles_raises(self):
        # envelope still far from steady at the end of the record
        params = TransientParams(tau=2.0, peak_ratio=6.0, steady_amp=1.0, duration=1.0)
        with pytest.raises(NoSteadyState):
            extract_transient_features(synth_transient(params, MAINS, FS), 1.0)


@pytest.fixture(scope="module")
def bank_data():
    bank = make_motor_bank(n_classes=18, seed=0)
    return motor_bank_features(bank, n_per_class=10, jitter=0.03, seed=1)


class TestFingerprint:
    def test_model_has_all_centroids(self, bank_data):
        model = train_fingerprint([(mid, f) for mid, _, f in bank_data])
        assert len(model.classes) == 18
        assert model.centroids.shape == (18, 16)

    def test_training_samples_classified_correctly(self, bank_data):
        model = train_fingerprint([(mid, f) for mid, _, f in bank_data])
        hits = sum(
            classify_fingerprint(model, f)[0] == mid for mid, _, f in bank_data
        )
        assert hits / len(bank_data) > 0.98

    def test_holdout_macro_f1(self, bank_data):
        # 70/30 split per class
        train, test = [], []
        seen: dict[str, int] = {}
        for mid, _, f in bank_data:
            seen[mid] = seen.get(mid, 0) + 1
            (train if seen[mid] <= 7 else test).append((mid, f))
        model = train_fingerprint(train)
        y_true = [mid for mid, _ in test]
        y_pred = [classify_fingerprint(model, f)[0] for _, f in test]
        score = macro_f1(y_true, y_pred)
        assert score >= 0.95

    def test_single_class_trivial(self, bank_data):
        samples = [(mid, f) for mid, _, f in bank_data if mid == "motor00"]
        model = train_fingerprint(samples)
        label, confidence = classify_fingerprint(model, samples[0][1])
        assert label == "motor00"
        assert confidence == float("inf")

    def test_class_too_small(self, bank_data):
        _, _, f = bank_data[0]
        with pytest.raises(ClassTooSmall):
            train_fingerprint([("a", f), ("a", f), ("b", f)])

    def test_collision_warning(self, bank_data):
        _, _, f = bank_data[0]
        _, _, g = bank_data[1]
        with pytest.warns(ClassCollisionWarning):
            train_fingerprint([("a", f), ("a", g), ("b", f), ("b", g)])

    def test_unseen_class_low_confidence(self, bank_data):
        train = [(mid, f) for mid, _, f in bank_data if mid not in ("motor17",)]
        model = train_fingerprint(train)
        unseen = [f for mid, _, f in bank_data if mid == "motor17"]
        confidences = [classify_fingerprint(model, f)[1] for f in unseen]
        seen = [f for mid, _, f in bank_data if mid == "motor00"]
        conf_seen = [classify_fingerprint(model, f)[1] for f in seen]
        assert np.median(confidences) < np.median(conf_seen)

    def test_model_round_trip(self, bank_data):
        model = train_fingerprint([(mid, f) for mid, _, f in bank_data])
        clone = FingerprintModel.from_json(model.to_json())
        _, _, f = bank_data[42]
        assert classify_fingerprint(model, f) == classify_fingerprint(clone, f)

    def test_macro_f1_against_sklearn(self, bank_data):
        sklearn_metrics = pytest.importorskip("sklearn.metrics")
        rng = np.random.default_rng(0)
        ids = sorted({mid for mid, _, _ in bank_data})
        y_true = list(rng.choice(ids, 200))
        y_pred = list(rng.choice(ids, 200))
        ours = macro_f1(y_true, y_pred)
        ref = sklearn_metrics.f1_score(y_true, y_pred, average="macro")
        assert abs(ours - ref) < 1e-12


def test_mechanical_grouping_is_reported_not_asserted():
    bank = make_motor_bank(n_classes=18, seed=0)
    report = mechanical_grouping_experiment(bank, n_per_class=3, seed=2)
    assert set(report) >= {"macro_f1", "chance_level", "n_motors", "conclusion"}
    assert 0.0 <= report["macro_f1"] <= 1.0
    assert report["n_motors"] == 18


def test_extract_event_transient_recovers_shape():
    # a motor switching on inside an aggregate with a steady background load
    dur = 2.0
    params = TransientParams(tau=0.08, peak_ratio=4.0, steady_amp=3.0, duration=dur)
    motor = synth_transient(params, MAINS, FS)
    background = synth_two_state(TwoStateParams(2000.0, 0.95), always_on(dur), MAINS, FS, dur)
    onset = 5000  # t = 0.5 s, a period boundary
    agg = background.samples.copy()
    agg[onset:] += motor.samples[: agg.size - onset]
    v = mains_voltage(MAINS, FS, dur)
    b = segment_periods(v, MAINS.frequency)
    wave = agg_wave = background.with_samples(agg)
    event_period = int(np.searchsorted(b, onset))
    delta = extract_event_transient(agg_wave, b, event_period, pre_periods=5, post_periods=40)
    truth = motor.samples[: len(delta)]
    err = np.sqrt(np.mean((delta.samples - truth) ** 2)) / np.sqrt(np.mean(truth**2))
    assert err < 0.02
