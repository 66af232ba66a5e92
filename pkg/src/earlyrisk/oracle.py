"""Brute-force AP/ATTC oracle for tests.

Recomputes the threshold-sweep metrics from scratch, sharing no code
with the evaluator: the sweep enumerates every score observed at any
frame of any clip (not just per-clip peaks), outcomes are recomputed per
threshold with plain python, and AP/ATTC follow the same definitions --
over the distinct achievable recall levels > 0, AP averages the best
precision at or above each level, ATTC averages the mean TTC of the
point attaining each level exactly (max precision, then max threshold).
"""

from __future__ import annotations

from typing import Sequence

from .errors import EvalError


def brute_force_oracle(
    trajectories,
    annotations,
    channel: int = 0,
    positive_class: str | None = None,
) -> tuple[float, float]:
    """(AP, ATTC) for one channel, computed the slow way."""
    clips = []
    for traj, ann in zip(trajectories, annotations):
        scores = [float(s) for s in traj.rates[:, channel]]
        positive = ann.label == "positive" and (
            positive_class is None or ann.risk_class == positive_class
        )
        if positive:
            window = scores[: ann.accident_start_T]
            horizon = ann.accident_start_T
        else:
            window = scores
            horizon = None
        clips.append((window, horizon, float(ann.frame_rate_F)))
    n_positive = sum(1 for _, horizon, _ in clips if horizon is not None)
    if n_positive == 0:
        raise EvalError("oracle: no positive clips")

    thresholds = sorted({s for window, _, _ in clips for s in window})
    points = []  # (recall, precision, mean_ttc, q)
    for q in thresholds:
        tp = 0
        fp = 0
        ttcs = []
        for window, horizon, rate in clips:
            crossed_at = None
            for idx, s in enumerate(window):
                if s >= q:
                    crossed_at = idx + 1
                    break
            if crossed_at is None:
                continue
            if horizon is None:
                fp += 1
            else:
                tp += 1
                ttcs.append((horizon - crossed_at) / rate)
        precision = tp / (tp + fp) if tp + fp > 0 else 1.0
        recall = tp / n_positive
        mean_ttc = sum(ttcs) / len(ttcs) if ttcs else None
        points.append((recall, precision, mean_ttc, q))

    levels = sorted({recall for recall, _, _, _ in points if recall > 0})
    if not levels:
        raise EvalError("oracle: ATTC undefined, nothing ever crosses")
    ap_terms = []
    ttc_terms = []
    for level in levels:
        at_or_above = [p for p in points if p[0] >= level]
        ap_terms.append(max(precision for _, precision, _, _ in at_or_above))
        exact = [p for p in points if p[0] == level]
        best = max(exact, key=lambda p: (p[1], p[3]))
        if best[2] is not None:
            ttc_terms.append(best[2])
    if not ttc_terms:
        raise EvalError("oracle: ATTC undefined, no level has a true positive")
    return sum(ap_terms) / len(ap_terms), sum(ttc_terms) / len(ttc_terms)
