"""Accuracy scoring of disaggregation estimates against ground truth.

The accuracy of an estimate is one minus the absolute energy error over the
true energy, acc = 1 - sum|p_est - p_true| / sum|p_true| (per-period series
discretization). It can be negative (estimate worse than estimating zero) and
is undefined when the true energy is zero (false positives).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import AllUndefined, LengthMismatch

WH_PER_J = 1.0 / 3600.0


@dataclass(frozen=True)
class AccuracyResult:
    """Score of one estimate; acc is None when the true energy is zero."""

    acc: float | None
    delta_e_wh: float
    e_true_wh: float

    @property
    def defined(self) -> bool:
        return self.acc is not None


def accuracy(p_est: np.ndarray, p_true: np.ndarray, t_period: float) -> AccuracyResult:
    """Energy-error accuracy of a per-period power series."""
    p_est = np.asarray(p_est, dtype=float)
    p_true = np.asarray(p_true, dtype=float)
    if p_est.shape != p_true.shape:
        raise LengthMismatch(f"series lengths differ: {p_est.shape} vs {p_true.shape}")
    if t_period <= 0:
        raise ValueError("t_period must be positive")
    delta_e = float(np.sum(np.abs(p_est - p_true)) * t_period * WH_PER_J)
    e_true = float(np.sum(np.abs(p_true)) * t_period * WH_PER_J)
    if e_true == 0.0:
        return AccuracyResult(acc=None, delta_e_wh=delta_e, e_true_wh=0.0)
    return AccuracyResult(acc=1.0 - delta_e / e_true, delta_e_wh=delta_e, e_true_wh=e_true)


def weighted_accuracy(results: Sequence[AccuracyResult]) -> float:
    """Energy-weighted accuracy: 1 - sum(delta_e) / sum(e_true).

    Undefined entries (zero true energy, i.e. false positives) are excluded.
    Raises AllUndefined when nothing remains.
    """
    defined = [r for r in results if r.defined]
    if not defined:
        raise AllUndefined("no result with nonzero true energy")
    total_delta = sum(r.delta_e_wh for r in defined)
    total_true = sum(r.e_true_wh for r in defined)
    return 1.0 - total_delta / total_true


@dataclass
class MatchResult:
    """Assignment of estimates to ground-truth loads with per-pair scores."""

    pairs: list[tuple[str, str, AccuracyResult]]  # (estimate id, truth id, score)
    false_positives: list[tuple[str, AccuracyResult]]  # unmatched estimates
    residual_pair: tuple[str, list[str], AccuracyResult] | None  # catch-all vs leftovers
    coverage: float  # true-energy share of matched loads

    def all_results(self) -> list[AccuracyResult]:
        out = [r for _, _, r in self.pairs]
        if self.residual_pair is not None:
            out.append(self.residual_pair[2])
        return out

    def weighted_accuracy(self) -> float:
        return weighted_accuracy(self.all_results())


def match_estimates_to_truth(
    estimates: Mapping[str, np.ndarray],
    truths: Mapping[str, np.ndarray],
    t_period: float,
    residual_id: str | None = None,
) -> MatchResult:
    """Greedy maximal energy-overlap assignment of estimates to truths.

    Overlap of a pair is the energy both series claim simultaneously,
    sum(min(est, truth)). Unmatched estimates become false positives with
    undefined accuracy; unmatched truth loads are folded into one residual
    series and compared against the ``residual_id`` estimate (or zero when
    absent). The ``residual_id`` estimate never competes in the greedy
    matching.
    """
    est_ids = [e for e in estimates if e != residual_id]
    truth_ids = list(truths)

    overlaps = []
    for e in est_ids:
        pe = np.clip(np.asarray(estimates[e], dtype=float), 0.0, None)
        for t in truth_ids:
            pt = np.clip(np.asarray(truths[t], dtype=float), 0.0, None)
            if pe.shape != pt.shape:
                raise LengthMismatch(f"series {e} and {t} differ in length")
            ov = float(np.sum(np.minimum(pe, pt)))
            if ov > 0:
                overlaps.append((ov, e, t))
    # deterministic content-based order: big overlaps first, ties broken by id
    overlaps.sort(key=lambda item: (-item[0], item[1], item[2]))

    assigned: list[tuple[str, str, AccuracyResult]] = []
    used_e: set[str] = set()
    used_t: set[str] = set()
    for _, e, t in overlaps:
        if e in used_e or t in used_t:
            continue
        assigned.append((e, t, accuracy(estimates[e], truths[t], t_period)))
        used_e.add(e)
        used_t.add(t)

    false_positives = []
    for e in est_ids:
        if e not in used_e:
            zeros = np.zeros_like(np.asarray(estimates[e], dtype=float))
            false_positives.append((e, accuracy(estimates[e], zeros, t_period)))

    leftover_truths = [t for t in truth_ids if t not in used_t]
    residual_pair = None
    if leftover_truths:
        folded = np.sum([np.asarray(truths[t], dtype=float) for t in leftover_truths], axis=0)
        if residual_id is not None and residual_id in estimates:
            rest_est = np.asarray(estimates[residual_id], dtype=float)
        else:
            rest_est = np.zeros_like(folded)
        residual_pair = (
            residual_id or "",
            leftover_truths,
            accuracy(rest_est, folded, t_period),
        )
    elif residual_id is not None and residual_id in estimates:
        zeros = np.zeros_like(np.asarray(estimates[residual_id], dtype=float))
        res = accuracy(estimates[residual_id], zeros, t_period)
        if res.delta_e_wh > 0:
            false_positives.append((residual_id, res))

    total_true = sum(
        float(np.sum(np.abs(np.asarray(truths[t], dtype=float)))) for t in truth_ids
    )
    matched_true = sum(
        float(np.sum(np.abs(np.asarray(truths[t], dtype=float)))) for t in used_t
    )
    coverage = matched_true / total_true if total_true > 0 else 0.0

    return MatchResult(
        pairs=assigned,
        false_positives=false_positives,
        residual_pair=residual_pair,
        coverage=coverage,
    )
