"""Bridge-rectifier current extraction by peak cutting.

A rectifier front end draws current only in short pulses around the voltage
extrema, so its pulses remain visible in the aggregate current. Extraction
proceeds in five steps:

1. find pulse begin/end samples from the second difference of the (lightly
   smoothed) current, thresholded against the period's median curvature;
2. classify the pulse pattern as a single-phase (2 pulses per period, half a
   period apart) or three-phase (4 pulses, two mirrored pairs) rectifier from
   the distribution of pulse phases over many periods;
3. drop pulses inconsistent with the pattern and re-insert missing ones at
   the modal phases;
4. replace the samples inside every pulse window by a cubic interpolation
   anchored just outside the window, which estimates the residual loads;
5. subtract: rectifier current = aggregate - residual.

Peeling is sequential: the dominant rectifier is extracted first and the
procedure re-runs on the residual, so an aggregate holding one single-phase
and one three-phase rectifier separates into both.

Detection is reliable for conduction angles up to roughly 1.0 rad
(single-phase; the full three-phase domain is covered): wider pulses have
weak curvature contrast against the residual at the default
``curvature_threshold`` and need a lower threshold or more smoothing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import CURRENT, Waveform, compute_period_features, segment_periods
from .errors import InsufficientData, PatternCollapse, WindowTooWide

SINGLE_PHASE = "single_phase"
THREE_PHASE = "three_phase"
NONE = "none"

_TEMPLATE_COUNT = {SINGLE_PHASE: 2, THREE_PHASE: 4}

#: pulses must sit within this phase distance (turns) of a modal phase
SLOT_TOL = 0.10


@dataclass
class PeakEdgeSet:
    """Per-period pulse windows (begin, end sample, inclusive) with scores."""

    boundaries: np.ndarray
    pairs: list[np.ndarray]  # one (n_i, 2) int array per period
    scores: list[np.ndarray]

    @property
    def n_periods(self) -> int:
        return len(self.pairs)

    def counts(self) -> np.ndarray:
        return np.array([len(p) for p in self.pairs])

    def pulse_phases(self, period: int) -> np.ndarray:
        """Pulse center phases of one period, in turns [0, 1)."""
        b0, b1 = self.boundaries[period], self.boundaries[period + 1]
        pairs = self.pairs[period]
        if len(pairs) == 0:
            return np.empty(0)
        centers = (pairs[:, 0] + pairs[:, 1]) / 2.0
        return (centers - b0) / (b1 - b0)

    def pulse_widths(self, period: int) -> np.ndarray:
        """Pulse widths of one period, in turns."""
        b0, b1 = self.boundaries[period], self.boundaries[period + 1]
        pairs = self.pairs[period]
        if len(pairs) == 0:
            return np.empty(0)
        return (pairs[:, 1] - pairs[:, 0] + 1) / (b1 - b0)


@dataclass
class UbrExtraction:
    """One recovered rectifier: its current, what was left, per-period power."""

    kind: str
    ubr_current: Waveform
    residual_current: Waveform
    p_series: np.ndarray


def _smoothed(x: np.ndarray, window: int) -> np.ndarray:
    if window <= 1:
        return x
    kernel = np.ones(window) / window
    pad = window // 2
    padded = np.pad(x, pad, mode="edge")
    return np.convolve(padded, kernel, mode="same")[pad : pad + x.size]


def _second_difference(x: np.ndarray) -> np.ndarray:
    d2 = np.zeros_like(x)
    d2[1:-1] = x[2:] - 2.0 * x[1:-1] + x[:-2]
    return d2


def estimate_noise_rms(samples: np.ndarray) -> float:
    """Robust white-noise estimate from the raw second difference."""
    d2 = _second_difference(samples)
    return float(np.median(np.abs(d2)) / (0.6745 * np.sqrt(6.0)))


def detect_peak_edges(
    current: Waveform,
    boundaries: np.ndarray,
    curvature_threshold: float = 8.0,
    smooth_window: int = 5,
    margin: int = 2,
) -> PeakEdgeSet:
    """Step 1: locate pulse windows from per-sample curvature.

    Samples whose second difference exceeds ``curvature_threshold`` times the
    period's median absolute curvature seed candidate runs. Each seed is then
    refined against a cubic baseline fitted just outside it: the pulse window
    is the contiguous stretch deviating from that baseline. The refinement
    recovers the full extent of wide pulses (whose interior curvature dips
    below threshold) and splits closely packed pulses of different rectifiers
    (where the current returns to the baseline in between). A pure sinusoid
    yields an empty set.
    """
    x = current.samples
    d2 = _second_difference(_smoothed(x, smooth_window))
    boundaries = np.asarray(boundaries, dtype=float)
    sigma = estimate_noise_rms(x)

    pairs: list[np.ndarray] = []
    scores: list[np.ndarray] = []
    for m in range(len(boundaries) - 1):
        lo = int(round(boundaries[m]))
        hi = int(round(boundaries[m + 1]))
        seg = d2[lo:hi]
        plen = hi - lo
        rms = np.sqrt(np.mean(x[lo:hi] ** 2))
        if rms == 0.0:
            pairs.append(np.empty((0, 2), dtype=int))
            scores.append(np.empty(0))
            continue
        scale = max(float(np.median(np.abs(seg))), 1e-9 * rms, 1e-15)
        mask = np.abs(seg) > curvature_threshold * scale
        seeds = _mask_runs(mask, close_gap=2, min_len=2)
        # pass A bounds the pulse extents conservatively so the harmonic
        # baseline is fitted on genuinely pulse-free samples; pass B then
        # grows/splits against that reliable baseline
        first = _refine_runs(x, seeds, lo, plen, sigma, None)
        baseline = _period_baseline(x, first, lo, hi, sigma)
        runs = _refine_runs(x, seeds, lo, plen, sigma, baseline) if baseline is not None else first
        if margin > 0 and runs:
            runs = _expand_with_margin(runs, margin, plen)
            runs = _merge_overlaps(runs)
        if runs:
            arr = np.array([(lo + a, lo + b) for a, b in runs], dtype=int)
            sc = np.array([np.max(np.abs(seg[a : b + 1])) / scale for a, b in runs])
        else:
            arr = np.empty((0, 2), dtype=int)
            sc = np.empty(0)
        pairs.append(arr)
        scores.append(sc)
    return PeakEdgeSet(boundaries=boundaries, pairs=pairs, scores=scores)


def _period_baseline(
    x: np.ndarray,
    seeds: list[tuple[int, int]],
    lo: int,
    hi: int,
    sigma: float,
    order: int = 13,
) -> np.ndarray | None:
    """Sparse-harmonic baseline of one period, fitted on non-seed samples.

    Residual loads can carry strong harmonics that a low-order polynomial
    cannot follow; when the free samples are harmonic-explainable this gives
    the refinement a baseline that is reliable across the whole period.
    """
    if not seeds:
        return None
    support = np.zeros(x.size, dtype=bool)
    for a, b in seeds:
        support[max(lo + a - 2, 0) : min(lo + b + 3, x.size)] = True
    fit = _harmonic_fit(x, support, lo, hi, order, tol=0.05, sigma=sigma)
    if fit is None:
        return None
    return fit(np.arange(lo, hi))


def _refine_runs(
    x: np.ndarray,
    seeds: list[tuple[int, int]],
    lo: int,
    plen: int,
    sigma: float,
    period_baseline: np.ndarray | None = None,
) -> list[tuple[int, int]]:
    """Adjust curvature seeds by deviation from a local baseline.

    Each seed is grown outward while the signal stays contiguously off the
    baseline (recovering wide pulses whose interior curvature dipped below
    threshold) and split wherever the signal returns to the baseline for a
    sustained stretch inside the seed (separating closely packed pulses that
    the curvature mask merged). The baseline is the period's sparse-harmonic
    fit when available and a per-seed cubic through outside anchors
    otherwise; growth stops at the first on-baseline sample, which keeps
    tight seeds tight.
    """
    if not seeds:
        return []
    # samples near any seed cannot serve as baseline anchors
    blocked = np.zeros(plen, dtype=bool)
    for a, b in seeds:
        blocked[max(0, a - 2) : min(plen, b + 3)] = True

    refined: list[tuple[int, int]] = []
    for i, (a, b) in enumerate(seeds):
        width = b - a + 1
        grow_l = grow_r = max(8, width)
        if period_baseline is None:
            # the per-seed cubic baseline is unreliable at range; never grow
            # past the midpoint toward a neighboring seed
            if i > 0:
                grow_l = min(grow_l, max(0, (a - seeds[i - 1][1] - 1) // 2))
            if i + 1 < len(seeds):
                grow_r = min(grow_r, max(0, (seeds[i + 1][0] - b - 1) // 2))
        if period_baseline is not None:
            span_a = max(0, a - grow_l)
            span_b = min(plen - 1, b + grow_r)
            baseline = period_baseline[span_a : span_b + 1]
        else:
            left = _free_anchors_local(blocked, a - 3, -1, 4)
            right = _free_anchors_local(blocked, b + 3, +1, 4)
            if len(left) < 2 or len(right) < 2:
                refined.append((a, b))  # nowhere to anchor a baseline
                continue
            # growth is confined between the innermost anchors, and
            # additionally to the allowance beyond the seed on each side
            span_a = max(left[0] + 1, a - grow_l)
            span_b = min(right[0] - 1, b + grow_r)
            anchors = np.array(left[::-1] + right)
            coeff = np.polyfit(anchors - a, x[lo + anchors], 3)
            baseline = np.polyval(coeff, np.arange(span_a, span_b + 1) - a)
        dev = np.abs(x[lo + span_a : lo + span_b + 1] - baseline)
        seed_peak = float(dev[a - span_a : b - span_a + 1].max())
        threshold = max(5.0 * sigma, 0.15 * seed_peak, 1e-12)

        na, nb = a, b
        while na - 1 >= span_a and dev[na - 1 - span_a] > threshold:
            na -= 1
        while nb + 1 <= span_b and dev[nb + 1 - span_a] > threshold:
            nb += 1

        # split on sustained baseline returns inside the (grown) seed
        inside = dev[na - span_a : nb - span_a + 1] > threshold
        gaps = _mask_runs(~inside, close_gap=0, min_len=4)
        cursor = na
        for ga, gb in gaps:
            if ga > 0 and gb < inside.size - 1:
                refined.append((cursor, na + ga - 1))
                cursor = na + gb + 1
        refined.append((cursor, nb))
    refined = [(p, q) for p, q in refined if q - p + 1 >= 2]
    refined.sort()
    return _merge_overlaps(refined) if refined else []


def _free_anchors_local(blocked: np.ndarray, start: int, step: int, want: int) -> list[int]:
    out = []
    idx = start
    hops = 0
    while 0 <= idx < blocked.size and len(out) < want and hops < 3 * want:
        if not blocked[idx]:
            out.append(idx)
        idx += step
        hops += 1
    return out


def _mask_runs(mask: np.ndarray, close_gap: int, min_len: int) -> list[tuple[int, int]]:
    """Contiguous True runs (begin, end inclusive), closing short gaps."""
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return []
    runs = []
    start = prev = idx[0]
    for i in idx[1:]:
        if i - prev <= close_gap + 1:
            prev = i
        else:
            runs.append((start, prev))
            start = prev = i
    runs.append((start, prev))
    return [(a, b) for a, b in runs if b - a + 1 >= min_len]


def _expand_with_margin(
    runs: list[tuple[int, int]], margin: int, plen: int
) -> list[tuple[int, int]]:
    """Widen runs by ``margin`` without bridging surviving gaps.

    Gaps that survived the deviation-driven growth are genuine separations
    between pulses, however small; margins extend at most to one sample short
    of the midpoint so distinct pulses always stay distinct.
    """
    out = []
    for i, (a, b) in enumerate(runs):
        na, nb = a - margin, b + margin
        if i > 0:
            gap = a - runs[i - 1][1] - 1
            na = max(na, a - min(margin, max(0, (gap - 1) // 2)))
        if i + 1 < len(runs):
            gap = runs[i + 1][0] - b - 1
            nb = min(nb, b + min(margin, max(0, (gap - 1) // 2)))
        out.append((max(0, na), min(plen - 1, nb)))
    return out


def _merge_overlaps(runs: list[tuple[int, int]]) -> list[tuple[int, int]]:
    merged = [runs[0]]
    for a, b in runs[1:]:
        la, lb = merged[-1]
        if a <= lb + 1:
            merged[-1] = (la, max(lb, b))
        else:
            merged.append((a, b))
    return merged


# ---------------------------------------------------------------------------
# step 2/3 template machinery


@dataclass
class _Template:
    kind: str
    slot_phases: np.ndarray  # turns
    slot_widths: np.ndarray  # turns
    agreement: float  # fraction of periods with every slot natively present
    strength: float  # total pulse width claimed, proxy for dominance


def _phase_clusters(edges: PeakEdgeSet) -> list[dict]:
    """Circular clustering of all pulse center phases.

    Returns clusters with center phase, median width, per-period support and
    summed width (strength).
    """
    records = []  # (phase, width, period)
    for m in range(edges.n_periods):
        for phase, width in zip(edges.pulse_phases(m), edges.pulse_widths(m)):
            records.append((phase % 1.0, width, m))
    if not records:
        return []
    records.sort()
    phases = np.array([r[0] for r in records])
    gaps = np.diff(phases)
    wrap_gap = 1.0 - phases[-1] + phases[0]
    split_after = list(np.flatnonzero(gaps > 0.04))
    groups = []
    start = 0
    for s in split_after:
        groups.append(records[start : s + 1])
        start = s + 1
    groups.append(records[start:])
    if len(groups) > 1 and wrap_gap <= 0.04:
        groups[0] = groups[-1] + groups[0]
        groups.pop()

    clusters = []
    for g in groups:
        ph = np.array([r[0] for r in g])
        # circular mean, stable for clusters near the wrap point
        ang = np.exp(2j * np.pi * ph)
        center = float(np.angle(ang.mean()) / (2 * np.pi) % 1.0)
        clusters.append(
            {
                "center": center,
                "width": float(np.median([r[1] for r in g])),
                "support": len({r[2] for r in g}),
                "strength": float(np.sum([r[1] for r in g])),
            }
        )
    return clusters


def _circ_dist(a: float, b: float) -> float:
    d = abs(a - b) % 1.0
    return min(d, 1.0 - d)


def _build_template(edges: PeakEdgeSet, kind: str, min_agreement: float) -> _Template | None:
    """Best slot set for the requested rectifier kind, or None."""
    n_periods = edges.n_periods
    clusters = [c for c in _phase_clusters(edges) if c["support"] >= min_agreement * n_periods]
    if not clusters:
        return None

    # mirror pairs: clusters half a period apart (positive and negative pulse)
    mirror_pairs = []
    for i in range(len(clusters)):
        for j in range(i + 1, len(clusters)):
            if abs(_circ_dist(clusters[i]["center"], clusters[j]["center"]) - 0.5) < 0.05:
                mirror_pairs.append((i, j))

    candidates = []
    if kind == SINGLE_PHASE:
        for i, j in mirror_pairs:
            slots = [clusters[i], clusters[j]]
            candidates.append(slots)
    else:
        # two mirror pairs whose first-half centers straddle the extremum:
        # (c - d, c + d) with c at the voltage peak, so the sum of the two
        # first-half phases is constant
        for a in range(len(mirror_pairs)):
            for b in range(a + 1, len(mirror_pairs)):
                ia, ja = mirror_pairs[a]
                ib, jb = mirror_pairs[b]
                if len({ia, ja, ib, jb}) < 4:
                    continue
                pa = min(clusters[ia]["center"] % 0.5, clusters[ja]["center"] % 0.5)
                pb = min(clusters[ib]["center"] % 0.5, clusters[jb]["center"] % 0.5)
                if abs(pa - pb) < 0.02:
                    continue
                # the two humps of a half-cycle straddle the voltage extremum
                if abs(pa + pb - 0.5) < 0.06:
                    candidates.append([clusters[k] for k in (ia, ja, ib, jb)])

    best = None
    for slots in candidates:
        phases = np.array(sorted(c["center"] for c in slots))
        widths = np.array([c["width"] for c in sorted(slots, key=lambda c: c["center"])])
        agreement = _template_agreement(edges, phases)
        if agreement < min_agreement:
            continue
        strength = float(sum(c["strength"] for c in slots))
        tpl = _Template(kind, phases, widths, agreement, strength)
        if best is None or tpl.strength > best.strength:
            best = tpl
    return best


def _template_agreement(edges: PeakEdgeSet, slot_phases: np.ndarray) -> float:
    full = 0
    for m in range(edges.n_periods):
        phases = edges.pulse_phases(m)
        if len(phases) == 0:
            continue
        if all(any(_circ_dist(p, s) <= SLOT_TOL for p in phases) for s in slot_phases):
            full += 1
    return full / max(edges.n_periods, 1)


def classify_ubr_type(edges: PeakEdgeSet, min_agreement: float = 0.6) -> str:
    """Step 2: single_phase, three_phase or none from the pulse phase pattern.

    Needs at least 10 periods. When both patterns are present (two stacked
    rectifiers) the one claiming more total pulse width wins, so the dominant
    rectifier is peeled first.
    """
    if edges.n_periods < 10:
        raise InsufficientData(f"need >= 10 periods, got {edges.n_periods}")
    three = _build_template(edges, THREE_PHASE, min_agreement)
    single = _build_template(edges, SINGLE_PHASE, min_agreement)
    if three is not None and single is not None:
        return three.kind if three.strength >= single.strength else single.kind
    if three is not None:
        return THREE_PHASE
    if single is not None:
        return SINGLE_PHASE
    return NONE


def filter_edges(edges: PeakEdgeSet, kind: str, min_agreement: float = 0.6) -> PeakEdgeSet:
    """Step 3: enforce exactly the template's pulses in every period.

    Detected pulses farther than 10 % of a period from a modal phase are
    dropped and missing pulses re-inserted. Every retained window is
    standardized to the slot's modal center with its width taken at a high
    quantile of the matched widths: rectifier pulses are phase-locked to the
    mains, and noise only ever clips detected widths, so the modal geometry
    is the best estimate of the true conduction window. Raises
    PatternCollapse when fewer than half the periods fit the template without
    insertions.
    """
    if kind not in _TEMPLATE_COUNT:
        raise ValueError(f"kind must be one of {tuple(_TEMPLATE_COUNT)}")
    tpl = _build_template(edges, kind, min_agreement)
    if tpl is None:
        raise PatternCollapse(f"no {kind} pulse template found")
    n_slots = len(tpl.slot_phases)

    # match detected pulses to slots, collecting per-slot width statistics
    matches: list[list[tuple[int, float]]] = [[] for _ in range(edges.n_periods)]
    slot_widths: list[list[float]] = [[] for _ in range(n_slots)]
    native_full = 0
    for m in range(edges.n_periods):
        phases = edges.pulse_phases(m)
        widths = edges.pulse_widths(m)
        scores = edges.scores[m]
        found = 0
        for s, s_phase in enumerate(tpl.slot_phases):
            best = None
            for k, p in enumerate(phases):
                d = _circ_dist(p, s_phase)
                if d <= SLOT_TOL and (best is None or d < best[0]):
                    best = (d, k)
            if best is not None:
                k = best[1]
                slot_widths[s].append(float(widths[k]))
                matches[m].append((s, float(scores[k])))
                found += 1
        if found == n_slots:
            native_full += 1
    if native_full < 0.5 * edges.n_periods:
        raise PatternCollapse(
            f"only {native_full}/{edges.n_periods} periods fit the {kind} template"
        )

    width_hi = np.array(
        [np.quantile(w, 0.85) if w else float(np.median(tpl.slot_widths)) for w in slot_widths]
    )

    new_pairs = []
    new_scores = []
    for m in range(edges.n_periods):
        b0, b1 = edges.boundaries[m], edges.boundaries[m + 1]
        plen = b1 - b0
        score_by_slot = dict(matches[m])
        chosen = []
        for s, s_phase in enumerate(tpl.slot_phases):
            n_samples = max(2, int(round(width_hi[s] * plen)))
            center = b0 + s_phase * plen
            a = max(int(round(center - n_samples / 2.0)), int(round(b0)))
            b = min(a + n_samples - 1, int(round(b1)) - 1)
            chosen.append((a, b, score_by_slot.get(s, 0.0)))
        chosen.sort()
        new_pairs.append(np.array([(a, b) for a, b, _ in chosen], dtype=int))
        new_scores.append(np.array([s for _, _, s in chosen]))
    return PeakEdgeSet(boundaries=edges.boundaries, pairs=new_pairs, scores=new_scores)


def interpolate_residual(
    current: Waveform,
    edges: PeakEdgeSet,
    anchor_samples: int = 8,
    harmonic_order: int = 13,
    fit_tol: float = 0.03,
    avoid: PeakEdgeSet | None = None,
) -> Waveform:
    """Step 4: estimate the residual loads inside every pulse window.

    Residual loads are mains-locked, so each period's free samples (outside
    every pulse window) are first fitted with a truncated harmonic series
    (DC + harmonics 1..``harmonic_order``). When the fit explains the free
    samples to within ``fit_tol`` relative RMS, it is evaluated inside the
    windows; this reconstructs residual loads that themselves carry current
    harmonics. Otherwise the window is bridged by a cubic fitted by least
    squares to ``anchor_samples`` free samples on each side, which handles
    non-harmonic residuals such as another rectifier's pulses.

    ``avoid`` marks additional regions (typically the raw detection, i.e.
    every pulse of every rectifier) that must not serve as anchors or fit
    support. Raises WindowTooWide when a window exceeds 40 % of its period.
    """
    x = current.samples.copy()
    n = x.size
    sigma = estimate_noise_rms(current.samples)

    per_period_windows: list[list[tuple[int, int]]] = []
    for m in range(edges.n_periods):
        plen = edges.boundaries[m + 1] - edges.boundaries[m]
        wins = []
        for a, b in edges.pairs[m]:
            if (b - a + 1) > 0.4 * plen:
                raise WindowTooWide(f"window [{a}, {b}] exceeds 40 % of its period")
            wins.append((int(a), int(b)))
        per_period_windows.append(wins)
    if not any(per_period_windows):
        return current.with_samples(x)

    occupied = np.zeros(n, dtype=bool)
    for wins in per_period_windows:
        for a, b in wins:
            occupied[max(a, 0) : min(b, n - 1) + 1] = True
    support = occupied.copy()  # regions unusable as anchors / fit input
    if avoid is not None:
        for pairs in avoid.pairs:
            for a, b in pairs:
                support[max(int(a), 0) : min(int(b), n - 1) + 1] = True

    for m, wins in enumerate(per_period_windows):
        if not wins:
            continue
        lo = int(round(edges.boundaries[m]))
        hi = int(round(edges.boundaries[m + 1]))
        fill_fn = _harmonic_fit(
            current.samples, support, lo, hi, harmonic_order, fit_tol, sigma=sigma
        )
        for a, b in wins:
            span = np.arange(a, b + 1)
            if fill_fn is not None:
                x[a : b + 1] = fill_fn(span)
                continue
            left = _free_anchors(support, a - 1, -1, anchor_samples)
            right = _free_anchors(support, b + 1, +1, anchor_samples)
            idx = np.array(left[::-1] + right)
            if len(left) >= 2 and len(right) >= 2:
                coeff = np.polyfit(idx - a, current.samples[idx], 3)
                x[a : b + 1] = np.polyval(coeff, span - a)
            elif left and right:
                xs = np.array([left[0], right[0]], dtype=float)
                x[a : b + 1] = np.interp(span, xs, current.samples[xs.astype(int)])
            # else: window at the very edge of the recording, leave unchanged
    return current.with_samples(x)


def _harmonic_fit(samples, support, lo, hi, order, tol, sigma=0.0, max_terms=6):
    """Sparse harmonic series over one period's free samples.

    Harmonics are added by greedy forward selection (largest residual
    reduction first), so only the few components the data demands are
    fitted. A joint full-order fit would be unidentifiable here: the pulse
    windows punch phase-locked holes into the support through which high
    harmonics alias into each other. Returns an evaluator for sample
    positions, or None when the free samples are not explained well enough
    (non-harmonic residual) or the selected basis is ill-conditioned.
    """
    idx = np.arange(lo, hi)
    free = idx[~support[lo:hi]]
    if free.size < 4 * max_terms + 8:
        return None
    plen = hi - lo

    def design(positions, ks):
        phase = 2 * np.pi * (positions - lo) / plen
        cols = [np.ones_like(phase)]
        for k in ks:
            cols.append(np.cos(k * phase))
            cols.append(np.sin(k * phase))
        return np.column_stack(cols)

    y = samples[free]
    free_f = free.astype(float)
    phase_free = 2 * np.pi * (free_f - lo) / plen
    scale = max(float(np.sqrt(np.mean(y**2))), 1e-12)
    target = max(tol * scale, 2.0 * sigma)

    kept = [1]
    a = design(free_f, kept)
    coeff, *_ = np.linalg.lstsq(a, y, rcond=None)
    resid = y - a @ coeff
    resid_rms = float(np.sqrt(np.mean(resid**2)))

    candidates = [k for k in range(2, order + 1)]
    while len(kept) < max_terms and resid_rms > target and candidates:
        # score candidates by raw projection of the current residual
        scores = []
        for k in candidates:
            c = resid @ np.cos(k * phase_free)
            s = resid @ np.sin(k * phase_free)
            scores.append((np.hypot(c, s), k))
        scores.sort(reverse=True)
        added = False
        for _, k in scores[:3]:
            trial = sorted(kept + [k])
            a_try = design(free_f, trial)
            gram = a_try.T @ a_try
            if np.linalg.cond(gram) > 1e6:
                continue
            coeff_try, *_ = np.linalg.lstsq(a_try, y, rcond=None)
            resid_try = y - a_try @ coeff_try
            rms_try = float(np.sqrt(np.mean(resid_try**2)))
            if rms_try < 0.9 * resid_rms or rms_try <= target:
                kept, a, coeff = trial, a_try, coeff_try
                resid, resid_rms = resid_try, rms_try
                candidates.remove(k)
                added = True
                break
        if not added:
            break

    if resid_rms > target:
        return None
    final_kept, final_coeff = list(kept), coeff.copy()
    return lambda positions: design(positions.astype(float), final_kept) @ final_coeff


def _free_anchors(occupied: np.ndarray, start: int, step: int, want: int) -> list[int]:
    out = []
    idx = start
    hops = 0
    while 0 <= idx < occupied.size and len(out) < want and hops < 3 * want:
        if not occupied[idx]:
            out.append(idx)
        idx += step
        hops += 1
    return out


def extract_ubr(
    current: Waveform,
    voltage: Waveform,
    max_rectifiers: int = 2,
    boundaries: np.ndarray | None = None,
    nominal_freq: float = 50.0,
    curvature_threshold: float = 8.0,
    smooth_window: int = 5,
    min_agreement: float = 0.6,
    min_signal_ratio: float = 0.005,
    on_error: str = "raise",
) -> tuple[list[UbrExtraction], Waveform, list[str]]:
    """Steps 1-5, iterated: peel up to ``max_rectifiers`` rectifiers.

    Each pass detects, classifies, filters, interpolates and subtracts; the
    next pass runs on the residual. Extraction stops when classification
    returns none or the extracted current is indistinguishable from noise
    (below ``min_signal_ratio`` of the input RMS), which also makes re-running
    on the final residual a fixed point.

    With ``on_error="stop"`` mid-pass failures terminate peeling and are
    reported in the returned warning list instead of raising.
    """
    if max_rectifiers not in (1, 2):
        raise ValueError("max_rectifiers must be 1 or 2")
    if boundaries is None:
        boundaries = segment_periods(voltage, nominal_freq)

    input_rms = float(np.sqrt(np.mean(current.samples**2)))
    noise_floor = estimate_noise_rms(current.samples)
    min_rms = max(3.0 * noise_floor, min_signal_ratio * input_rms, 1e-12)

    extractions: list[UbrExtraction] = []
    warnings: list[str] = []
    cur = current
    for _ in range(max_rectifiers):
        try:
            edges = detect_peak_edges(cur, boundaries, curvature_threshold, smooth_window)
            kind = classify_ubr_type(edges, min_agreement)
            if kind == NONE:
                break
            filtered = filter_edges(edges, kind, min_agreement)
            # anchors and harmonic fits must skip every detected pulse, not
            # just this rectifier's windows, or a second rectifier's pulses
            # would pollute the residual estimate
            residual = interpolate_residual(cur, filtered, avoid=edges)
        except (PatternCollapse, WindowTooWide, InsufficientData) as exc:
            if on_error == "raise":
                raise
            warnings.append(f"rectifier extraction stopped: {exc}")
            break
        ubr_samples = cur.samples - residual.samples
        if float(np.sqrt(np.mean(ubr_samples**2))) < min_rms:
            break
        ubr_wave = cur.with_samples(ubr_samples)
        feats = compute_period_features(ubr_wave, voltage, boundaries, harmonic_count=1)
        p_series = np.array([f.p for f in feats])
        extractions.append(
            UbrExtraction(kind=kind, ubr_current=ubr_wave, residual_current=residual, p_series=p_series)
        )
        cur = residual
    return extractions, cur, warnings
