"""Curves, AP, ATTC: hand-enumerated examples and brute-force oracle parity."""

import json

import numpy as np
import pytest

from earlyrisk.data import RISK_CLASSES, ClipAnnotation
from earlyrisk.errors import ConfigError, DataError, EvalError
from earlyrisk.evaluation import (
    EvalConfig,
    attc,
    average_precision,
    clip_outcome,
    crossing_time,
    per_class_report,
    pr_ttc_curve,
    report_to_dict,
)
from earlyrisk.model import RiskTrajectory
from earlyrisk.oracle import brute_force_oracle


def ann(cid, label, T=None, num_frames=4, F=20.0, risk_class=None):
    return ClipAnnotation(
        clip_id=cid,
        label=label,
        num_frames=num_frames,
        frame_rate_F=F,
        accident_start_T=T,
        risk_class=risk_class,
    )


def traj(cid, *rows):
    return RiskTrajectory(cid, np.array(rows, dtype=float).reshape(len(rows), -1))


class TestCrossing:
    def test_first_crossing(self):
        assert crossing_time(np.array([0.1, 0.9, 0.2]), 0.8) == 2

    def test_threshold_zero_crosses_immediately(self):
        assert crossing_time(np.array([0.0, 0.1]), 0.0) == 1

    def test_unreachable_threshold(self):
        assert crossing_time(np.array([0.3, 0.4]), 1.0 + 1e-9) is None


class TestClipOutcome:
    def test_true_positive_ttc(self):
        rates = np.zeros(100)
        rates[59:] = 0.9  # first crossing at frame 60 (1-based)
        out = clip_outcome(rates, ann("a", "positive", T=100, num_frames=100), 0.5)
        assert out.kind == "tp"
        assert out.ttc_seconds == pytest.approx(2.0)

    def test_true_negative(self):
        out = clip_outcome(np.full(4, 0.2), ann("a", "negative"), 0.5)
        assert out.kind == "tn"

    def test_crossing_at_accident_frame_has_zero_ttc(self):
        rates = np.zeros(10)
        rates[-1] = 0.9
        out = clip_outcome(rates, ann("a", "positive", T=10, num_frames=10), 0.5)
        assert out.kind == "tp" and out.ttc_seconds == 0.0

    def test_frames_after_T_do_not_count(self):
        rates = np.zeros(10)
        rates[7:] = 0.9  # crossing only after the incident start
        out = clip_outcome(rates, ann("a", "positive", T=6, num_frames=10), 0.5)
        assert out.kind == "fn"

    def test_false_positive(self):
        out = clip_outcome(np.array([0.1, 0.9, 0.1, 0.1]), ann("a", "negative"), 0.5)
        assert out.kind == "fp"


def three_clip_instance():
    """Two positives (peaks .9 and .4) and one negative (peak .6)."""
    trajectories = [
        traj("p1", 0.2, 0.9, 0.3, 0.1),
        traj("p2", 0.1, 0.2, 0.4, 0.3),
        traj("n1", 0.1, 0.6, 0.2, 0.1),
    ]
    annotations = [
        ann("p1", "positive", T=4),
        ann("p2", "positive", T=4),
        ann("n1", "negative"),
    ]
    return trajectories, annotations


class TestCurve:
    def test_three_clip_hand_enumeration(self):
        curve = pr_ttc_curve(*three_clip_instance())
        by_q = {round(p.q, 6): p for p in curve}
        assert set(by_q) == {0.9, 0.6, 0.4}
        assert by_q[0.9].precision == 1.0 and by_q[0.9].recall == 0.5
        assert by_q[0.6].precision == 0.5 and by_q[0.6].recall == 0.5
        assert by_q[0.4].precision == pytest.approx(2 / 3)
        assert by_q[0.4].recall == 1.0
        # thresholds descending, recall non-decreasing along the sweep
        qs = [p.q for p in curve]
        assert qs == sorted(qs, reverse=True)
        recalls = [p.recall for p in curve]
        assert recalls == sorted(recalls)

    def test_counts_consistent(self):
        curve = pr_ttc_curve(*three_clip_instance())
        for p in curve:
            assert p.tp + p.fn == 2
            assert p.tp + p.fp > 0
            assert p.tp + p.fp + p.fn + p.tn == 3

    def test_single_positive_step_function(self):
        trajectories = [traj("p", 0.1, 0.7, 0.2)]
        annotations = [ann("p", "positive", T=3, num_frames=3)]
        curve = pr_ttc_curve(trajectories, annotations)
        assert [(p.q, p.recall) for p in curve] == [(0.7, 1.0)]

    def test_all_negatives_scored_zero_gives_precision_one(self):
        # interpolated precision is 1 at every achievable recall, so AP = 1
        trajectories = [traj("p", 0.0, 0.8, 0.0), traj("n", 0.0, 0.0, 0.0)]
        annotations = [ann("p", "positive", T=3, num_frames=3), ann("n", "negative", num_frames=3)]
        curve = pr_ttc_curve(trajectories, annotations)
        levels = sorted({p.recall for p in curve if p.recall > 0})
        for level in levels:
            assert max(p.precision for p in curve if p.recall >= level) == 1.0
        assert average_precision(curve) == 1.0

    def test_no_positives_rejected(self):
        trajectories = [traj("n", 0.1, 0.2, 0.1)]
        with pytest.raises(EvalError, match="no positive"):
            pr_ttc_curve(trajectories, [ann("n", "negative", num_frames=3)])

    def test_fixed_grid_policy(self):
        cfg = EvalConfig(threshold_policy="fixed_grid", grid_size=5)
        curve = pr_ttc_curve(*three_clip_instance(), cfg)
        assert [p.q for p in curve] == [0.0, 0.25, 0.5, 0.75, 1.0]
        with pytest.raises(ConfigError):
            EvalConfig(threshold_policy="fixed_grid", grid_size=1).validate()


class TestApAttc:
    def test_perfect_separation_gives_ap_one(self):
        trajectories = [traj("p", 0.1, 0.9), traj("n", 0.2, 0.2)]
        annotations = [ann("p", "positive", T=2, num_frames=2), ann("n", "negative", num_frames=2)]
        curve = pr_ttc_curve(trajectories, annotations)
        assert average_precision(curve) == 1.0

    def test_three_clip_ap(self):
        curve = pr_ttc_curve(*three_clip_instance())
        assert average_precision(curve) == pytest.approx(5 / 6)

    def test_constant_ttc(self):
        # both positives cross 40 frames before T at every threshold
        rates = np.zeros(100)
        rates[60:] = 0.9
        trajectories = [
            RiskTrajectory("p1", rates.reshape(-1, 1)),
            RiskTrajectory("p2", rates.reshape(-1, 1)),
        ]
        annotations = [
            ann("p1", "positive", T=100, num_frames=100),
            ann("p2", "positive", T=100, num_frames=100),
        ]
        curve = pr_ttc_curve(trajectories, annotations)
        assert attc(curve) == pytest.approx((100 - 61) / 20.0)

    def test_three_clip_attc_hand_average(self):
        curve = pr_ttc_curve(*three_clip_instance())
        # level 0.5 -> point q=.9 (precision 1): p1 crosses at frame 2, ttc .1 s
        # level 1.0 -> point q=.4: p1 crosses at t=2, p2 at t=3 -> mean .075 s
        expected = np.mean([0.1, np.mean([0.1, 0.05])])
        assert attc(curve) == pytest.approx(expected, abs=1e-12)

    def test_attc_undefined(self):
        with pytest.raises(EvalError, match="ATTC undefined"):
            attc([])


class TestPerClassReport:
    def test_binary_report_matches_curve_functions(self):
        trajectories, annotations = three_clip_instance()
        report = per_class_report(trajectories, annotations)
        assert set(report.classes) == {"any"}
        curve = pr_ttc_curve(trajectories, annotations)
        assert report.macro_ap == pytest.approx(average_precision(curve))
        assert report.macro_attc == pytest.approx(attc(curve))

    def test_per_class_macro_is_mean(self):
        rng = np.random.default_rng(0)
        trajectories, annotations = [], []
        for i, cls in enumerate(RISK_CLASSES[:2]):
            for j in range(3):
                cid = f"{cls}{j}"
                rates = rng.uniform(0.0, 0.9, size=(5, 2))
                trajectories.append(RiskTrajectory(cid, rates))
                annotations.append(
                    ann(cid, "positive", T=5, num_frames=5, risk_class=cls)
                )
        for j in range(3):
            cid = f"neg{j}"
            trajectories.append(RiskTrajectory(cid, rng.uniform(0, 0.5, size=(5, 2))))
            annotations.append(ann(cid, "negative", num_frames=5))
        report = per_class_report(trajectories, annotations)
        assert set(report.classes) == set(RISK_CLASSES[:2])
        aps = [c.ap for c in report.classes.values()]
        attcs = [c.attc for c in report.classes.values()]
        assert report.macro_ap == pytest.approx(np.mean(aps))
        assert report.macro_attc == pytest.approx(np.mean(attcs))

    def test_class_without_positives_is_flagged(self):
        rng = np.random.default_rng(1)
        trajectories = [
            RiskTrajectory("p0", rng.uniform(0.1, 0.9, size=(4, 2))),
            RiskTrajectory("n0", rng.uniform(0.0, 0.5, size=(4, 2))),
        ]
        annotations = [
            ann("p0", "positive", T=4, risk_class="cyclist"),
            ann("n0", "negative"),
        ]
        report = per_class_report(trajectories, annotations)
        assert report.skipped_classes == ("pedestrian",)
        assert set(report.classes) == {"cyclist"}

    def test_symmetric_two_class_instances_have_equal_aps(self):
        # mirrored channels and labels -> identical per-class metrics
        for seed in range(10):
            rng = np.random.default_rng(seed)
            trajectories, annotations = [], []
            for j in range(4):
                a = rng.uniform(0, 1, size=(6, 1))
                b = rng.uniform(0, 1, size=(6, 1))
                trajectories.append(
                    RiskTrajectory(f"a{j}", np.concatenate([a, b], axis=1))
                )
                annotations.append(
                    ann(f"a{j}", "positive", T=6, num_frames=6, risk_class="cyclist")
                )
                trajectories.append(
                    RiskTrajectory(f"b{j}", np.concatenate([b, a], axis=1))
                )
                annotations.append(
                    ann(f"b{j}", "positive", T=6, num_frames=6, risk_class="pedestrian")
                )
            report = per_class_report(trajectories, annotations)
            assert report.classes["cyclist"].ap == pytest.approx(
                report.classes["pedestrian"].ap, abs=1e-12
            )
            assert report.classes["cyclist"].attc == pytest.approx(
                report.classes["pedestrian"].attc, abs=1e-12
            )

    def test_alignment_mismatch(self):
        trajectories, annotations = three_clip_instance()
        with pytest.raises(DataError):
            per_class_report(trajectories[:2], annotations)

    def test_report_bytes_deterministic(self):
        trajectories, annotations = three_clip_instance()
        a = json.dumps(report_to_dict(per_class_report(trajectories, annotations)), sort_keys=True)
        b = json.dumps(report_to_dict(per_class_report(trajectories, annotations)), sort_keys=True)
        assert a == b


def random_instance(rng, max_clips=12, max_frames=10):
    n = int(rng.integers(2, max_clips + 1))
    T = int(rng.integers(2, max_frames + 1))
    # coarse score quantization provokes threshold ties
    quant = rng.choice([1, 4, 10])
    trajectories, annotations = [], []
    has_positive = False
    for i in range(n):
        positive = bool(rng.random() < 0.5) or (i == n - 1 and not has_positive)
        has_positive = has_positive or positive
        scores = np.round(rng.uniform(0, 1, size=(T, 1)) * quant) / quant
        trajectories.append(RiskTrajectory(f"c{i}", scores))
        if positive:
            T_acc = int(rng.integers(1, T + 1))
            annotations.append(
                ann(f"c{i}", "positive", T=T_acc, num_frames=T, F=10.0)
            )
        else:
            annotations.append(ann(f"c{i}", "negative", num_frames=T, F=10.0))
    return trajectories, annotations


class TestOracleParity:
    def test_agreement_on_random_instances(self):
        rng = np.random.default_rng(2024)
        for _ in range(60):
            trajectories, annotations = random_instance(rng)
            curve = pr_ttc_curve(trajectories, annotations)
            ap = average_precision(curve)
            at = attc(curve)
            oracle_ap, oracle_attc = brute_force_oracle(trajectories, annotations)
            assert ap == pytest.approx(oracle_ap, abs=1e-9)
            assert at == pytest.approx(oracle_attc, abs=1e-9)

    def test_perfect_separation(self):
        trajectories = [traj("p", 0.1, 0.9), traj("n", 0.2, 0.2)]
        annotations = [ann("p", "positive", T=2, num_frames=2), ann("n", "negative", num_frames=2)]
        oracle_ap, oracle_attc = brute_force_oracle(trajectories, annotations)
        assert oracle_ap == 1.0
        assert oracle_attc == pytest.approx(0.0)

    def test_single_positive(self):
        trajectories = [traj("p", 0.3, 0.6, 0.1)]
        annotations = [ann("p", "positive", T=3, num_frames=3)]
        oracle_ap, _ = brute_force_oracle(trajectories, annotations)
        assert oracle_ap == 1.0


class TestScoreOrderInvariance:
    def test_cubic_transform_preserves_ap_and_ttc(self):
        rng = np.random.default_rng(77)
        for _ in range(20):
            trajectories, annotations = random_instance(rng)
            curve = pr_ttc_curve(trajectories, annotations)
            transformed = [
                RiskTrajectory(t.clip_id, t.rates**3) for t in trajectories
            ]
            curve_t = pr_ttc_curve(transformed, annotations)
            assert average_precision(curve) == pytest.approx(
                average_precision(curve_t), abs=1e-12
            )
            assert attc(curve) == pytest.approx(attc(curve_t), abs=1e-12)

    def test_raising_q_never_raises_recall_or_per_clip_ttc(self):
        rng = np.random.default_rng(5)
        trajectories, annotations = random_instance(rng)
        curve = pr_ttc_curve(trajectories, annotations)  # descending q
        for earlier, later in zip(curve, curve[1:]):
            assert later.recall >= earlier.recall  # q decreases along the list
        rates = trajectories[0].rates[:, 0]
        crossings = []
        for q in (0.1, 0.4, 0.8):
            c = crossing_time(rates, q)
            crossings.append(c)
        present = [c for c in crossings if c is not None]
        assert present == sorted(present)
