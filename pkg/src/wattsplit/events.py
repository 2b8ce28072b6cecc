"""Event-based disaggregation of two-state loads.

Steps in the per-period active power are detected between steady segments,
clustered in the (dp, dq) plane and paired into on/off schedules, from which
each load's power series is reconstructed as a constant level on its
on-intervals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import PeriodFeatures, feature_series

ON = "on"
OFF = "off"


@dataclass(frozen=True)
class SwitchEvent:
    """A persistent step change in per-period (p, q)."""

    period_index: int
    dp: float
    dq: float

    @property
    def direction(self) -> str:
        return ON if self.dp > 0 else OFF

    def magnitude_vector(self) -> np.ndarray:
        """(dp, dq) folded onto the load's positive (p, q) magnitude."""
        sign = 1.0 if self.dp > 0 else -1.0
        return np.array([sign * self.dp, sign * self.dq])


@dataclass
class TwoStateCluster:
    id: str
    mean_dp: float
    mean_dq: float
    events: list[SwitchEvent]
    intervals: list[tuple[int, int | None]] = field(default_factory=list)
    unpaired: list[SwitchEvent] = field(default_factory=list)


def detect_steps(
    features: list[PeriodFeatures],
    threshold_w: float = 50.0,
    settle_periods: int = 3,
) -> list[SwitchEvent]:
    """Detect switching events in a per-period feature sequence.

    A period belongs to a steady segment while the period-to-period change in
    p stays below threshold_w / 2. An event is emitted between two steady
    segments (each at least ``settle_periods`` long) whose levels differ by
    at least ``threshold_w``; the event index is the first period after the
    earlier steady segment. Transients between steady segments produce no
    events.

    dp and dq are differences of medians taken over the segment ends adjacent
    to the transition. Keeping the medians local both isolates the step from
    slow drift elsewhere in the segment (a continuously varying motor must
    not contaminate another load's step size) and suppresses the drift itself
    (a gradual change measures near zero across its segment junctions).
    """
    if not features:
        raise ValueError("features must be non-empty")
    if threshold_w <= 0:
        raise ValueError("threshold_w must be positive")
    p = feature_series(features, "p")
    q = feature_series(features, "q")
    window = max(settle_periods, 5)

    jumps = np.abs(np.diff(p)) >= threshold_w / 2  # jumps[k]: change between k and k+1
    breaks = np.flatnonzero(jumps) + 1
    segments = []
    start = 0
    for b in breaks:
        segments.append((start, b))
        start = b
    segments.append((start, len(p)))

    steady = [(a, b) for a, b in segments if b - a >= settle_periods]
    events = []
    for (a1, b1), (a2, b2) in zip(steady, steady[1:]):
        before = slice(max(a1, b1 - window), b1)
        after = slice(a2, min(b2, a2 + window))
        dp = float(np.median(p[after]) - np.median(p[before]))
        if abs(dp) >= threshold_w:
            dq = float(np.median(q[after]) - np.median(q[before]))
            events.append(SwitchEvent(period_index=b1, dp=dp, dq=dq))
    return events


def cluster_events(
    events: list[SwitchEvent],
    rel_tol: float = 0.1,
    abs_tol_w: float = 30.0,
) -> list[TwoStateCluster]:
    """Group events by (dp, dq) magnitude and pair them into schedules.

    Agglomerative merging: the two nearest groups (Euclidean distance between
    centroids in the folded (dp, dq) plane) are merged while their distance
    stays within max(rel_tol * mean |dp|, abs_tol_w). Within each cluster,
    events are paired on -> off in temporal order; events violating the
    alternation are kept but flagged unpaired.
    """
    if rel_tol <= 0 or abs_tol_w <= 0:
        raise ValueError("tolerances must be positive")
    if not events:
        return []

    groups = [[e] for e in sorted(events, key=lambda e: e.period_index)]

    def centroid(group):
        return np.mean([e.magnitude_vector() for e in group], axis=0)

    while len(groups) > 1:
        best = None
        for i in range(len(groups)):
            ci = centroid(groups[i])
            for j in range(i + 1, len(groups)):
                d = float(np.linalg.norm(ci - centroid(groups[j])))
                if best is None or d < best[0]:
                    best = (d, i, j)
        d, i, j = best
        merged = groups[i] + groups[j]
        mean_dp = float(np.mean([e.magnitude_vector()[0] for e in merged]))
        if d > max(rel_tol * mean_dp, abs_tol_w):
            break
        groups[i] = merged
        del groups[j]

    clusters = []
    order = sorted(range(len(groups)), key=lambda k: -centroid(groups[k])[0])
    for rank, k in enumerate(order):
        group = sorted(groups[k], key=lambda e: e.period_index)
        c = centroid(group)
        cluster = TwoStateCluster(
            id=f"c{rank + 1:02d}",
            mean_dp=float(c[0]),
            mean_dq=float(c[1]),
            events=group,
        )
        _pair_events(cluster)
        clusters.append(cluster)
    return clusters


def _pair_events(cluster: TwoStateCluster) -> None:
    """Temporal on->off pairing; alternation violations are flagged unpaired."""
    pending = None
    violations = False
    for e in cluster.events:
        if e.direction == ON:
            if pending is not None:
                cluster.unpaired.append(pending)
                violations = True
            pending = e
        else:
            if pending is not None:
                cluster.intervals.append((pending.period_index, e.period_index))
                pending = None
            else:
                cluster.unpaired.append(e)
                violations = True
    if pending is not None:
        # a load still running at the end of the recording is normal, but only
        # when the cluster otherwise looks like a clean two-state pattern
        if not violations:
            cluster.intervals.append((pending.period_index, None))
        else:
            cluster.unpaired.append(pending)


def reconstruct_power(clusters: list[TwoStateCluster], num_periods: int) -> dict[str, np.ndarray]:
    """Per-load power series: mean_dp on the on-intervals, zero elsewhere."""
    out = {}
    for cluster in clusters:
        series = np.zeros(num_periods)
        for a, b in cluster.intervals:
            stop = num_periods if b is None else min(b, num_periods)
            series[a:stop] = cluster.mean_dp
        out[cluster.id] = series
    return out
