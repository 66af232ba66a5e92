"""Threshold-sweep evaluation: precision/recall/TTC curves, AP, ATTC.

A clip counts as predicted-positive at threshold q when its risk rate
reaches q (r_t >= q) at any searched frame: frames 1..T for positive
clips (frames after the incident start would leak the event), all frames
for negative clips. For a true positive the time-to-collision is
(T - t_cross) / F seconds at the first crossing frame.

Sweeping q over the distinct per-clip peak scores yields every
achievable operating point. AP is the mean, over the distinct achievable
recall levels (> 0), of the maximum precision among points with recall
at or above that level (interpolated AP). ATTC averages, over the same
recall levels, the mean TTC of the operating point attaining each level
(max precision among exact-recall points, ties toward higher q) -- the
TTC-vs-recall curve evaluated at its own achievable recalls.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import RISK_CLASSES, ClipAnnotation
from .errors import ConfigError, DataError, EvalError
from .model import RiskTrajectory

THRESHOLD_POLICIES = ("all_observed_scores", "fixed_grid")

BINARY_CLASS = "any"


@dataclass(frozen=True)
class EvalConfig:
    threshold_policy: str = "all_observed_scores"
    grid_size: int | None = None
    crossing_rule: str = "gte"  # predicted positive when r_t >= q
    per_class: bool = True

    def validate(self) -> None:
        if self.threshold_policy not in THRESHOLD_POLICIES:
            raise ConfigError(
                f"threshold_policy must be one of {THRESHOLD_POLICIES}, "
                f"got {self.threshold_policy!r}"
            )
        if self.threshold_policy == "fixed_grid":
            if self.grid_size is None or self.grid_size < 2:
                raise ConfigError(
                    f"fixed_grid needs grid_size >= 2, got {self.grid_size}"
                )
        if self.crossing_rule != "gte":
            raise ConfigError(
                f"crossing_rule {self.crossing_rule!r} unsupported (only 'gte')"
            )


@dataclass(frozen=True)
class CurvePoint:
    q: float
    precision: float
    recall: float
    mean_ttc: float | None  # seconds over true positives; None when no TP
    tp: int
    fp: int
    fn: int
    tn: int


@dataclass(frozen=True)
class ClipOutcome:
    kind: str  # "tp" | "fp" | "fn" | "tn"
    ttc_seconds: float | None = None


@dataclass
class ClassEval:
    ap: float
    attc: float
    curve: list[CurvePoint]


@dataclass
class EvalReport:
    classes: dict[str, ClassEval]
    macro_ap: float
    macro_attc: float
    skipped_classes: tuple[str, ...] = ()


def crossing_time(rates: np.ndarray, q: float) -> int | None:
    """Smallest 1-based frame with rate >= q, or None if never reached."""
    hits = np.nonzero(rates >= q)[0]
    if hits.size == 0:
        return None
    return int(hits[0]) + 1


def _search_window(rates: np.ndarray, annotation: ClipAnnotation) -> np.ndarray:
    if annotation.label == "positive":
        return rates[: annotation.accident_start_T]
    return rates


def clip_outcome(rates: np.ndarray, annotation: ClipAnnotation, q: float) -> ClipOutcome:
    """TP/FP/FN/TN at threshold q, with the TTC in seconds for a TP."""
    if rates.shape[0] != annotation.num_frames:
        raise DataError(
            f"clip {annotation.clip_id!r}: {rates.shape[0]} rates vs "
            f"{annotation.num_frames} annotated frames"
        )
    t_cross = crossing_time(_search_window(rates, annotation), q)
    if annotation.label == "positive":
        if t_cross is None:
            return ClipOutcome("fn")
        ttc = (annotation.accident_start_T - t_cross) / annotation.frame_rate_F
        return ClipOutcome("tp", ttc)
    return ClipOutcome("tn") if t_cross is None else ClipOutcome("fp")


def _channel_scores(
    trajectories: Sequence[RiskTrajectory],
    annotations: Sequence[ClipAnnotation],
    channel: int,
    positive_class: str | None,
) -> list[tuple[np.ndarray, ClipAnnotation]]:
    """Per-clip (scores, effective annotation) for one evaluation channel.

    With a positive_class, clips of other classes (and negatives) are
    re-labelled negative for this channel, so their whole score sequence
    is searched for false crossings.
    """
    if len(trajectories) != len(annotations):
        raise DataError(
            f"{len(trajectories)} trajectories vs {len(annotations)} annotations"
        )
    pairs = []
    for traj, ann in zip(trajectories, annotations):
        if traj.clip_id != ann.clip_id:
            raise DataError(
                f"trajectory {traj.clip_id!r} not aligned with clip {ann.clip_id!r}"
            )
        if traj.num_frames != ann.num_frames:
            raise DataError(
                f"clip {ann.clip_id!r}: {traj.num_frames} trajectory frames vs "
                f"{ann.num_frames} annotated"
            )
        if not 0 <= channel < traj.num_classes:
            raise DataError(
                f"clip {ann.clip_id!r}: channel {channel} outside 0.."
                f"{traj.num_classes - 1}"
            )
        scores = traj.rates[:, channel]
        positive = ann.label == "positive" and (
            positive_class is None or ann.risk_class == positive_class
        )
        if positive:
            pairs.append((scores, ann))
        else:
            pairs.append(
                (
                    scores,
                    ClipAnnotation(
                        clip_id=ann.clip_id,
                        label="negative",
                        num_frames=ann.num_frames,
                        frame_rate_F=ann.frame_rate_F,
                    ),
                )
            )
    return pairs


def _thresholds(pairs, config: EvalConfig) -> list[float]:
    if config.threshold_policy == "fixed_grid":
        return [float(q) for q in np.linspace(0.0, 1.0, config.grid_size)]
    peaks = {float(_search_window(scores, ann).max()) for scores, ann in pairs}
    return sorted(peaks, reverse=True)


def pr_ttc_curve(
    trajectories: Sequence[RiskTrajectory],
    annotations: Sequence[ClipAnnotation],
    config: EvalConfig | None = None,
    channel: int = 0,
    positive_class: str | None = None,
) -> list[CurvePoint]:
    """One CurvePoint per threshold, thresholds in descending order.

    Precision is defined as 1 when nothing is predicted positive.
    Raises EvalError when the channel has no positive clip (AP undefined).
    """
    config = config or EvalConfig()
    config.validate()
    pairs = _channel_scores(trajectories, annotations, channel, positive_class)
    n_positive = sum(1 for _, ann in pairs if ann.label == "positive")
    if not pairs or n_positive == 0:
        raise EvalError("AP undefined: no positive clips on this channel")
    points = []
    for q in _thresholds(pairs, config):
        tp = fp = fn = tn = 0
        ttcs = []
        for scores, ann in pairs:
            outcome = clip_outcome(scores, ann, q)
            if outcome.kind == "tp":
                tp += 1
                ttcs.append(outcome.ttc_seconds)
            elif outcome.kind == "fp":
                fp += 1
            elif outcome.kind == "fn":
                fn += 1
            else:
                tn += 1
        precision = tp / (tp + fp) if (tp + fp) > 0 else 1.0
        recall = tp / n_positive
        mean_ttc = float(np.mean(ttcs)) if ttcs else None
        points.append(CurvePoint(q, precision, recall, mean_ttc, tp, fp, fn, tn))
    return points


def _recall_levels(curve: Sequence[CurvePoint]) -> list[float]:
    return sorted({p.recall for p in curve if p.recall > 0})


def average_precision(curve: Sequence[CurvePoint]) -> float:
    """Mean over achievable recall levels of the max precision at or right
    of that level (interpolated AP)."""
    levels = _recall_levels(curve)
    if not levels:
        return 0.0
    total = 0.0
    for level in levels:
        total += max(p.precision for p in curve if p.recall >= level)
    return total / len(levels)


def _point_at_level(curve: Sequence[CurvePoint], level: float) -> CurvePoint:
    candidates = [p for p in curve if p.recall == level]
    return max(candidates, key=lambda p: (p.precision, p.q))


def attc(curve: Sequence[CurvePoint]) -> float:
    """Mean TTC over the recall levels used by AP (in seconds).

    Each level contributes the mean TTC of the operating point attaining
    exactly that recall (the plotted TTC-vs-recall curve); among the
    thresholds attaining a recall the one with max precision, then max
    q, represents the level.
    """
    levels = _recall_levels(curve)
    values = []
    for level in levels:
        point = _point_at_level(curve, level)
        if point.mean_ttc is not None:
            values.append(point.mean_ttc)
    if not values:
        raise EvalError("ATTC undefined: no recall level has a true positive")
    return float(np.mean(values))


def per_class_report(
    trajectories: Sequence[RiskTrajectory],
    annotations: Sequence[ClipAnnotation],
    config: EvalConfig | None = None,
) -> EvalReport:
    """AP/ATTC per class plus macro averages.

    Single-channel trajectories are the binary task (class "any", every
    positive clip counts). With C > 1 channels, channel c is evaluated
    with RISK_CLASSES[c] positives against everything else.
    Classes without positives are omitted and flagged.
    """
    config = config or EvalConfig()
    config.validate()
    if not trajectories:
        raise DataError("nothing to evaluate")
    C = trajectories[0].num_classes
    if any(t.num_classes != C for t in trajectories):
        raise DataError("trajectories disagree on channel count")
    if C == 1:
        channels = [(BINARY_CLASS, 0, None)]
    else:
        if not config.per_class:
            raise ConfigError("per_class=False requires single-channel trajectories")
        channels = [(name, c, name) for c, name in enumerate(RISK_CLASSES[:C])]

    classes: dict[str, ClassEval] = {}
    skipped = []
    for name, channel, positive_class in channels:
        try:
            curve = pr_ttc_curve(trajectories, annotations, config, channel, positive_class)
        except EvalError:
            skipped.append(name)
            continue
        classes[name] = ClassEval(
            ap=average_precision(curve), attc=attc(curve), curve=curve
        )
    if not classes:
        raise EvalError("no class has positive clips; report undefined")
    macro_ap = float(np.mean([c.ap for c in classes.values()]))
    macro_attc = float(np.mean([c.attc for c in classes.values()]))
    return EvalReport(classes, macro_ap, macro_attc, tuple(skipped))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def report_to_dict(report: EvalReport) -> dict:
    return {
        "classes": {
            name: {"ap": ce.ap, "attc": ce.attc} for name, ce in report.classes.items()
        },
        "macro": {"map": report.macro_ap, "attc": report.macro_attc},
        "skipped_classes": list(report.skipped_classes),
    }


def write_report_json(path: Path, report: EvalReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report_to_dict(report), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_curve_csv(path: Path, curve: Sequence[CurvePoint]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("q,precision,recall,mean_ttc\n")
        for p in curve:
            ttc = "" if p.mean_ttc is None else repr(float(p.mean_ttc))
            fh.write(
                f"{float(p.q)!r},{float(p.precision)!r},{float(p.recall)!r},{ttc}\n"
            )


def write_report_files(directory: Path, report: EvalReport) -> None:
    """report.json plus one curve_<class>.csv per evaluated class."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_report_json(directory / "report.json", report)
    for name, ce in report.classes.items():
        write_curve_csv(directory / f"curve_{name}.csv", ce.curve)
