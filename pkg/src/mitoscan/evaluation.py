"""Point-detection matching and precision/recall/F1 arithmetic."""
from __future__ import annotations

import math
from dataclasses import dataclass, field


@dataclass
class MatchReport:
    tp: int
    fp: int
    fn: int
    matches: list[tuple[int, int, float]] = field(default_factory=list)

    def __add__(self, other: "MatchReport") -> "MatchReport":
        return MatchReport(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


def match_detections(pred: list[tuple[float, float]], gt: list[tuple[float, float]],
                     radius: float) -> MatchReport:
    """Greedy one-to-one matching of predictions to ground truth.

    Pairs within ``radius`` are taken closest-first (ties broken by
    prediction index, then ground-truth index); each point matches at most
    once. Unmatched predictions count as false positives, unmatched ground
    truth as false negatives.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    pairs = []
    for pi, (px, py) in enumerate(pred):
        for gi, (gx, gy) in enumerate(gt):
            d = math.hypot(px - gx, py - gy)
            if d <= radius:
                pairs.append((d, pi, gi))
    pairs.sort()

    used_pred: set[int] = set()
    used_gt: set[int] = set()
    matches: list[tuple[int, int, float]] = []
    for d, pi, gi in pairs:
        if pi in used_pred or gi in used_gt:
            continue
        used_pred.add(pi)
        used_gt.add(gi)
        matches.append((pi, gi, d))
    tp = len(matches)
    return MatchReport(tp=tp, fp=len(pred) - tp, fn=len(gt) - tp, matches=matches)


def f1_from_pr(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def prf1(report: MatchReport) -> dict[str, float]:
    """Precision, recall, and F1 with the zero-denominator-means-zero rule."""
    p = report.tp / (report.tp + report.fp) if report.tp + report.fp else 0.0
    r = report.tp / (report.tp + report.fn) if report.tp + report.fn else 0.0
    return {"precision": p, "recall": r, "f1": f1_from_pr(p, r)}
