"""Semantic load labeling.

Two mechanisms:

* coarse class hints from the power factor and harmonic distortion of a
  load's steady per-period features (resistive / motor / electronic);
* individual-motor identification from the turn-on transient current: a
  fixed set of shape features is extracted from the normalized transient and
  classified against per-motor centroids in z-scored feature space.

The mechanical-load grouping experiment (can transients tell pumps from fans
from compressors?) is exposed as a harness that reports its score; it is a
negative control and asserts nothing.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks

from .core import (
    CURRENT,
    PeriodFeatures,
    Waveform,
    compute_period_features,
    feature_series,
    total_harmonic_distortion,
    uniform_boundaries,
)
from .errors import ClassCollisionWarning, ClassTooSmall, InsufficientData, NoSteadyState
from .simulate import Mains, TransientParams, mains_voltage, synth_transient

RESISTIVE_LIKE = "resistive_like"
MOTOR_LIKE = "motor_like"
ELECTRONIC_LIKE = "electronic_like"


def power_factor_label(
    features: list[PeriodFeatures],
    resistive_lambda: float = 0.97,
    motor_lambda: float = 0.5,
    thd_limit: float = 0.4,
) -> str:
    """Coarse load class from the power factor p/s over a steady on-interval.

    High harmonic distortion marks electronic front ends regardless of the
    power factor; otherwise a near-unity factor is resistive and a moderately
    lagging one is motor-like. Strongly reactive, low-distortion loads
    (capacitor banks) fall back to electronic_like as well.
    """
    if len(features) < 10:
        raise InsufficientData(f"need >= 10 steady periods, got {len(features)}")
    p = feature_series(features, "p")
    s = feature_series(features, "s")
    lam = float(np.median(p / np.where(s > 0, s, np.inf)))
    thd = total_harmonic_distortion(features)
    if thd > thd_limit:
        return ELECTRONIC_LIKE
    if lam >= resistive_lambda:
        return RESISTIVE_LIKE
    if lam >= motor_lambda:
        return MOTOR_LIKE
    return ELECTRONIC_LIKE


# ---------------------------------------------------------------------------
# transient fingerprints

FEATURE_NAMES = (
    "decay_tau_s",
    "peak_ratio",
    "settle_time_s",
    "overshoot_count",
    "envelope_area",
    "initial_slope",
    "early_rms_ratio",
    "crest_factor_steady",
    "thd_early",
    "thd_steady",
    "h2_early",
    "h3_early",
    "h5_early",
    "h7_early",
    "tail_flatness",
    "fit_r2",
)


@dataclass(frozen=True)
class TransientFeatureVector:
    """Shape features of a normalized turn-on transient."""

    decay_tau_s: float
    peak_ratio: float
    settle_time_s: float
    overshoot_count: float
    envelope_area: float
    initial_slope: float
    early_rms_ratio: float
    crest_factor_steady: float
    thd_early: float
    thd_steady: float
    h2_early: float
    h3_early: float
    h5_early: float
    h7_early: float
    tail_flatness: float
    fit_r2: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in FEATURE_NAMES])


def extract_transient_features(
    transient: Waveform,
    steady_amp: float,
    mains_freq: float = 50.0,
) -> TransientFeatureVector:
    """Extract the fingerprint features from one turn-on transient.

    The current is normalized to a steady-state amplitude of 1 A first, so
    two transients differing only in scale produce identical features.
    Raises NoSteadyState when the envelope never settles within 5 % of its
    final level.
    """
    if steady_amp <= 0:
        raise ValueError("steady_amp must be positive")
    x = transient.samples / steady_amp
    fs = transient.sample_rate
    period = fs / mains_freq
    half = int(round(period / 2))
    n_half = x.size // half
    if n_half < 24:
        raise InsufficientData("transient must span at least 12 mains periods")

    env = np.array([np.abs(x[k * half : (k + 1) * half]).max() for k in range(n_half)])
    t_env = (np.arange(n_half) + 0.5) * half / fs

    tail = env[-n_half // 4 :]
    t_tail = t_env[-n_half // 4 :]
    steady = float(np.median(tail))
    if steady <= 0 or np.any(np.abs(tail - steady) > 0.05 * steady):
        raise NoSteadyState("envelope does not settle within 5 %")
    # a slowly decaying envelope looks locally flat; reject residual drift
    drift = float(np.polyfit(t_tail, tail, 1)[0]) * (t_tail[-1] - t_tail[0])
    if abs(drift) > 0.02 * steady:
        raise NoSteadyState("envelope still drifting at the end of the record")

    peak = float(env.max())
    peak_ratio = peak / steady
    excess = env - steady

    # settle time: first point after which the envelope stays within 5 %
    inside = np.abs(excess) <= 0.05 * steady
    settle_idx = 0
    for k in range(n_half):
        if inside[k:].all():
            settle_idx = k
            break
    settle_time = float(t_env[settle_idx])

    # log-linear decay fit over the decaying stretch
    if peak_ratio < 1.02:
        tau, r2 = 0.0, 1.0
    else:
        sel = excess > 0.05 * (peak - steady)
        sel &= np.arange(n_half) >= int(np.argmax(env))
        if sel.sum() < 4:
            tau, r2 = 0.0, 1.0
        else:
            ln = np.log(excess[sel])
            slope, icept = np.polyfit(t_env[sel], ln, 1)
            tau = float(-1.0 / slope) if slope < 0 else 0.0
            pred = slope * t_env[sel] + icept
            ss_res = float(np.sum((ln - pred) ** 2))
            ss_tot = float(np.sum((ln - ln.mean()) ** 2))
            r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0

    overshoots, _ = find_peaks(excess, height=0.05 * steady)
    envelope_area = float(np.trapezoid(np.clip(excess, 0.0, None), t_env))
    initial_slope = float((env[1] - env[0]) / (t_env[1] - t_env[0]))

    # per-period harmonic structure, early window vs steady tail
    boundaries = uniform_boundaries(x.size, fs, mains_freq)
    norm = transient.with_samples(x)
    ref = mains_voltage(Mains(v_rms=1.0, frequency=mains_freq), fs, x.size / fs)
    feats = compute_period_features(norm, ref, boundaries, harmonic_count=10)
    early = feats[:3]
    late = feats[3 * len(feats) // 4 :]
    thd_early = float(np.mean([total_harmonic_distortion(f) for f in early]))
    thd_steady = float(np.mean([total_harmonic_distortion(f) for f in late]))
    h_early = np.mean([np.abs(f.harmonics) for f in early], axis=0)

    early_rms = np.sqrt(np.mean(x[: 2 * int(period)] ** 2))
    tail_x = x[-4 * int(period) :]
    steady_rms = float(np.sqrt(np.mean(tail_x**2)))
    crest = float(np.abs(tail_x).max() / steady_rms) if steady_rms > 0 else 0.0
    tail_flatness = float(np.std(tail) / steady)

    return TransientFeatureVector(
        decay_tau_s=tau,
        peak_ratio=peak_ratio,
        settle_time_s=settle_time,
        overshoot_count=float(len(overshoots)),
        envelope_area=envelope_area,
        initial_slope=initial_slope,
        early_rms_ratio=float(early_rms / steady_rms) if steady_rms > 0 else 0.0,
        crest_factor_steady=crest,
        thd_early=thd_early,
        thd_steady=thd_steady,
        h2_early=float(h_early[1]),
        h3_early=float(h_early[2]),
        h5_early=float(h_early[4]),
        h7_early=float(h_early[6]),
        tail_flatness=tail_flatness,
        fit_r2=float(r2),
    )


@dataclass
class FingerprintModel:
    """Nearest-centroid classifier over z-scored transient features."""

    classes: list[str]
    centroids: np.ndarray  # (n_classes, n_features)
    means: np.ndarray
    scales: np.ndarray
    feature_names: tuple[str, ...] = FEATURE_NAMES

    def to_json(self) -> str:
        return json.dumps(
            {
                "schema": "wattsplit.fingerprint.v1",
                "feature_names": list(self.feature_names),
                "classes": self.classes,
                "centroids": self.centroids.tolist(),
                "means": self.means.tolist(),
                "scales": self.scales.tolist(),
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "FingerprintModel":
        doc = json.loads(text)
        return cls(
            classes=list(doc["classes"]),
            centroids=np.asarray(doc["centroids"], dtype=float),
            means=np.asarray(doc["means"], dtype=float),
            scales=np.asarray(doc["scales"], dtype=float),
            feature_names=tuple(doc["feature_names"]),
        )


def train_fingerprint(samples: list[tuple[str, TransientFeatureVector]]) -> FingerprintModel:
    """Fit per-feature z-normalization and one centroid per motor class.

    Requires at least two transients per class. Warns (ClassCollisionWarning)
    when two classes contain near-identical samples, which makes them
    indistinguishable.
    """
    by_class: dict[str, list[np.ndarray]] = {}
    for label, vec in samples:
        by_class.setdefault(label, []).append(vec.as_array())
    for label, vecs in by_class.items():
        if len(vecs) < 2:
            raise ClassTooSmall(f"class {label!r} has {len(vecs)} sample(s), need >= 2")

    all_vecs = np.vstack([v for vecs in by_class.values() for v in vecs])
    means = all_vecs.mean(axis=0)
    scales = all_vecs.std(axis=0)
    scales[scales < 1e-12] = 1.0

    classes = sorted(by_class)
    centroids = np.vstack(
        [((np.vstack(by_class[c]) - means) / scales).mean(axis=0) for c in classes]
    )

    labels = [label for label, _ in samples]
    z = (np.vstack([vec.as_array() for _, vec in samples]) - means) / scales
    for i in range(len(samples)):
        for j in range(i + 1, len(samples)):
            if labels[i] != labels[j] and np.linalg.norm(z[i] - z[j]) < 1e-9:
                warnings.warn(
                    f"identical transients in classes {labels[i]!r} and {labels[j]!r}",
                    ClassCollisionWarning,
                )
    return FingerprintModel(classes=classes, centroids=centroids, means=means, scales=scales)


def classify_fingerprint(
    model: FingerprintModel, features: TransientFeatureVector
) -> tuple[str, float]:
    """Nearest centroid; confidence is the second-nearest/nearest distance ratio."""
    z = (features.as_array() - model.means) / model.scales
    dists = np.linalg.norm(model.centroids - z, axis=1)
    order = np.argsort(dists)
    best = int(order[0])
    if len(model.classes) == 1:
        return model.classes[0], float("inf")
    d0 = dists[best]
    d1 = dists[int(order[1])]
    confidence = float(d1 / d0) if d0 > 0 else float("inf")
    return model.classes[best], confidence


def macro_f1(y_true: list[str], y_pred: list[str]) -> float:
    """Unweighted mean of per-class F1 scores."""
    classes = sorted(set(y_true) | set(y_pred))
    scores = []
    for c in classes:
        tp = sum(1 for t, p in zip(y_true, y_pred) if t == c and p == c)
        fp = sum(1 for t, p in zip(y_true, y_pred) if t != c and p == c)
        fn = sum(1 for t, p in zip(y_true, y_pred) if t == c and p != c)
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom > 0 else 0.0)
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# synthetic motor bank and experiment harnesses

MECH_GROUPS = ("pump", "compressor", "fan", "other")


def make_motor_bank(
    n_classes: int = 18,
    seed: int = 0,
    mains: Mains = Mains(),
    sample_rate: float = 10_000.0,
) -> list[dict]:
    """Parameter sets for a bank of distinct motors.

    Base parameters are laid out on coarse grids so any two motors differ by
    at least ~20 % in decay constant or peak ratio; the mechanical group
    label is assigned independently of the electrical parameters (group
    membership is NOT encoded in the transient, mirroring a fleet where
    motors of the same duty differ more between units than between duties).
    """
    rng = np.random.default_rng(seed)
    taus = 0.035 * 1.28 ** np.arange(6)
    peak_ratios = 2.8 * 1.35 ** np.arange(3)
    groups = ["pump"] * 6 + ["compressor"] * 4 + ["fan"] * 5 + ["other"] * 3
    bank = []
    for i in range(n_classes):
        tau = float(taus[i % 6])
        pr = float(peak_ratios[i // 6 % 3])
        params = TransientParams(
            tau=tau,
            peak_ratio=pr,
            steady_amp=float(rng.uniform(0.5, 8.0)),
            duration=max(1.2, 8 * tau + 0.6),
            phase_lag=float(rng.uniform(0.4, 0.9)),
            osc_amp=0.25 * (i % 2),
            osc_freq=6.0 + 2.0 * (i % 3),
            osc_tau=0.6 * tau,
            inrush_harmonics={
                2: 0.05 + 0.04 * (i % 3),
                3: 0.10 + 0.05 * ((i + 1) % 3),
                5: 0.05 + 0.03 * ((i + 2) % 2),
            },
        )
        bank.append(
            {
                "motor_id": f"motor{i:02d}",
                "group": groups[i % len(groups)],
                "params": params,
                "mains": mains,
                "sample_rate": sample_rate,
            }
        )
    return bank


def motor_bank_features(
    bank: list[dict],
    n_per_class: int = 10,
    jitter: float = 0.03,
    seed: int = 1,
) -> list[tuple[str, str, TransientFeatureVector]]:
    """(motor_id, group, features) for repeated jittered turn-on events."""
    rng = np.random.default_rng(seed)
    out = []
    for motor in bank:
        for _ in range(n_per_class):
            wave = synth_transient(
                motor["params"], motor["mains"], motor["sample_rate"], rng=rng, jitter=jitter
            )
            feats = extract_transient_features(
                wave, motor["params"].steady_amp, motor["mains"].frequency
            )
            out.append((motor["motor_id"], motor["group"], feats))
    return out


def mechanical_grouping_experiment(
    bank: list[dict],
    n_per_class: int = 10,
    seed: int = 1,
) -> dict:
    """Leave-one-motor-out grouping of motors by mechanical duty.

    For each motor, a group classifier is trained on all other motors'
    transients and applied to the held-out motor's. Because group membership
    is independent of the transient shape, the expected score is near chance;
    the harness reports the score and never asserts on it.
    """
    data = motor_bank_features(bank, n_per_class=n_per_class, seed=seed)
    motors = sorted({mid for mid, _, _ in data})
    y_true: list[str] = []
    y_pred: list[str] = []
    for held in motors:
        train = [(g, f) for mid, g, f in data if mid != held]
        test = [(g, f) for mid, g, f in data if mid == held]
        model = train_fingerprint(train)
        for g, f in test:
            pred, _ = classify_fingerprint(model, f)
            y_true.append(g)
            y_pred.append(pred)
    score = macro_f1(y_true, y_pred)
    chance = 1.0 / len(MECH_GROUPS)
    return {
        "macro_f1": score,
        "chance_level": chance,
        "n_motors": len(motors),
        "n_events": len(y_true),
        "conclusion": "no better than chance" if score < 2 * chance else "above chance",
    }


def extract_event_transient(
    current: Waveform,
    boundaries: np.ndarray,
    event_period: int,
    pre_periods: int = 5,
    post_periods: int = 40,
) -> Waveform:
    """Isolate a load's turn-on transient from an aggregate current.

    The periodic pre-event current (average cycle over ``pre_periods``) is
    subtracted from the post-event window, leaving the switching load's own
    contribution plus noise.
    """
    if event_period - pre_periods < 0:
        raise ValueError("not enough pre-event periods")
    post_periods = min(post_periods, len(boundaries) - 1 - event_period)
    plen = int(round(boundaries[event_period] - boundaries[event_period - 1]))
    pre = np.zeros(plen)
    for m in range(event_period - pre_periods, event_period):
        lo = int(round(boundaries[m]))
        pre += current.samples[lo : lo + plen]
    pre /= pre_periods

    lo = int(round(boundaries[event_period]))
    hi = int(round(boundaries[event_period + post_periods]))
    segment = current.samples[lo:hi].copy()
    tiles = int(np.ceil(segment.size / plen))
    template = np.tile(pre, tiles)[: segment.size]
    return Waveform(segment - template, current.sample_rate, CURRENT, start_time=lo / current.sample_rate)
