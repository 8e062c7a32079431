"""Spotting evaluation and learning-curve metrics.

Detection matching is greedy by descending confidence: a prediction becomes
a true positive if an unmatched ground-truth event of the same class lies
within the temporal tolerance, consuming the closest one.  Average precision
integrates the precision envelope over all recall steps (no fixed-point
interpolation).  Avg-mAP averages the class-mean AP over a tolerance grid:
tight is 1..5 s in 1 s steps, loose 5..60 s in 5 s steps.

Learning curves are (labeled-ratio, Avg-mAP) sequences; AULC is the span-
normalized trapezoidal area, Md@x the value at exactly x percent labeled,
Mp@y the smallest ratio reaching y percent of the final value.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Spot
from .spotting import PredictedSpot

TIGHT_DELTAS = (1.0, 2.0, 3.0, 4.0, 5.0)
LOOSE_DELTAS = tuple(float(d) for d in range(5, 65, 5))

REGIMES = ("tight", "loose")


def delta_grid(regime: str) -> tuple[float, ...]:
    if regime == "tight":
        return TIGHT_DELTAS
    if regime == "loose":
        return LOOSE_DELTAS
    raise ValueError(f"unknown regime {regime!r}")


@dataclass
class ClassMatch:
    """Confidence-ordered (confidence, is_tp) pairs for one class."""

    confidences: list[float] = field(default_factory=list)
    is_tp: list[bool] = field(default_factory=list)
    num_gt: int = 0


@dataclass
class MatchResult:
    per_class: dict[int, ClassMatch] = field(default_factory=dict)

    def tp_count(self, class_id: int) -> int:
        return sum(self.per_class[class_id].is_tp) if class_id in self.per_class else 0


def match_spots(predictions: list[PredictedSpot], ground_truth: list[Spot],
                delta: float) -> MatchResult:
    """Match one video's predictions against its ground truth at tolerance delta."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    result = MatchResult()
    classes = sorted({p.class_id for p in predictions} | {g.class_id for g in ground_truth})
    for k in classes:
        preds = sorted((p for p in predictions if p.class_id == k),
                       key=lambda p: (-p.confidence, p.time))
        gt_times = np.array(sorted(g.time for g in ground_truth if g.class_id == k))
        taken = np.zeros(len(gt_times), dtype=bool)
        cm = ClassMatch(num_gt=len(gt_times))
        for p in preds:
            cm.confidences.append(p.confidence)
            hit = False
            if len(gt_times):
                dist = np.abs(gt_times - p.time)
                dist[taken] = np.inf
                j = int(np.argmin(dist))
                if dist[j] <= delta:
                    taken[j] = True
                    hit = True
            cm.is_tp.append(hit)
        result.per_class[k] = cm
    return result


def merge_match_results(results: list[MatchResult]) -> MatchResult:
    """Pool per-video matches into one split-level result."""
    merged = MatchResult()
    for r in results:
        for k, cm in sorted(r.per_class.items()):
            dst = merged.per_class.setdefault(k, ClassMatch())
            dst.confidences.extend(cm.confidences)
            dst.is_tp.extend(cm.is_tp)
            dst.num_gt += cm.num_gt
    return merged


def average_precision(cm: ClassMatch) -> float | None:
    """All-point interpolated AP for one class; None when the class has no
    ground truth (skipped from the class mean, not scored zero)."""
    if cm.num_gt == 0:
        return None
    if not cm.confidences or not any(cm.is_tp):
        return 0.0
    order = np.argsort(-np.asarray(cm.confidences), kind="stable")
    tp = np.asarray(cm.is_tp, dtype=bool)[order]
    cum_tp = np.cumsum(tp)
    precision = cum_tp / (np.arange(len(tp)) + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    return float(envelope[tp].sum() / cm.num_gt)


def mean_average_precision(match: MatchResult) -> float:
    aps = [ap for cm in match.per_class.values() if (ap := average_precision(cm)) is not None]
    if not aps:
        raise ValueError("no class has ground truth in this split")
    return float(np.mean(aps))


def map_at_delta(groups: list[tuple[list[PredictedSpot], list[Spot]]], delta: float) -> float:
    return mean_average_precision(
        merge_match_results([match_spots(p, g, delta) for p, g in groups]))


def avg_map_grouped(groups: list[tuple[list[PredictedSpot], list[Spot]]],
                    regime: str) -> float:
    """Avg-mAP over per-video (predictions, ground truth) pairs."""
    if not any(g for _, g in groups):
        raise ValueError("ground truth is empty over the evaluated split")
    return float(np.mean([map_at_delta(groups, d) for d in delta_grid(regime)]))


def avg_map(predictions: list[PredictedSpot], ground_truth: list[Spot],
            regime: str) -> float:
    """Single-sequence convenience wrapper around :func:`avg_map_grouped`."""
    return avg_map_grouped([(predictions, ground_truth)], regime)


def per_class_ap_grouped(groups: list[tuple[list[PredictedSpot], list[Spot]]],
                         regime: str) -> dict[int, float | None]:
    """Per-class AP averaged over the regime's tolerance grid."""
    acc: dict[int, list[float]] = {}
    classes: set[int] = set()
    for d in delta_grid(regime):
        merged = merge_match_results([match_spots(p, g, d) for p, g in groups])
        classes |= set(merged.per_class)
        for k, cm in merged.per_class.items():
            ap = average_precision(cm)
            if ap is not None:
                acc.setdefault(k, []).append(ap)
    return {k: (float(np.mean(acc[k])) if k in acc else None) for k in sorted(classes)}


# ---------------------------------------------------------------------------
# learning curves


@dataclass(frozen=True)
class CurvePoint:
    labeled_ratio: float
    avg_map: float


@dataclass
class LearningCurve:
    points: list[CurvePoint] = field(default_factory=list)

    def __post_init__(self):
        ratios = [p.labeled_ratio for p in self.points]
        if any(b <= a for a, b in zip(ratios, ratios[1:])):
            raise ValueError("curve ratios must be strictly increasing")

    @property
    def final_value(self) -> float:
        return self.points[-1].avg_map


def _as_curve(curve) -> LearningCurve:
    if isinstance(curve, LearningCurve):
        return curve
    return LearningCurve([CurvePoint(float(r), float(v)) for r, v in curve])


def aulc(curve) -> float:
    """Trapezoidal area under the curve divided by the ratio span, so a
    constant curve integrates to its constant."""
    c = _as_curve(curve)
    if len(c.points) < 2:
        raise ValueError("AULC needs at least two curve points")
    r = np.array([p.labeled_ratio for p in c.points])
    v = np.array([p.avg_map for p in c.points])
    return float(np.trapezoid(v, r) / (r[-1] - r[0]))


def md_at(curve, x: float) -> float:
    """Curve value at exactly x percent labeled; no interpolation."""
    c = _as_curve(curve)
    target = x / 100.0
    for p in c.points:
        if abs(p.labeled_ratio - target) < 1e-9:
            return p.avg_map
    raise ValueError(f"curve has no point at {x}% labeled")


def mp_at(curve, y: float) -> float | None:
    """Smallest labeled ratio reaching y percent of the final value.

    None when the threshold is never reached (possible for y > 100).
    """
    c = _as_curve(curve)
    if not c.points:
        raise ValueError("curve is empty")
    threshold = (y / 100.0) * c.final_value
    for p in c.points:
        if p.avg_map >= threshold:
            return p.labeled_ratio
    return None
