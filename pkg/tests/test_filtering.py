"""Component scoring, cascade, and precision/recall evaluation tests."""

from __future__ import annotations

import numpy as np
import pytest

from dynsfm.errors import InvalidInput, MissingSignal, NoPositives, SeriesTooShort
from dynsfm.filtering import (
    COMPONENT_NAMES,
    CascadeConfig,
    FilterConfig,
    FilterScore,
    FilterSignals,
    PRPoint,
    aggregate,
    average_precision,
    cascade,
    pr_curve,
    score_classifier,
    score_component,
    score_distortion,
    score_flow,
    score_focal,
    score_masking,
    score_tracking,
    score_video,
    score_vlm,
    sigmoid_margin,
    smooth_margin,
    step_average_precision,
)
from dynsfm.synthbench import FIXTURE_KINDS, make_filter_fixture


def healthy_signals() -> FilterSignals:
    n = 31
    return FilterSignals(
        classifier_acceptable=0.9,
        classifier_interaction=0.5,
        distortion_alpha=0.2,
        focal_seq=np.full(n, 900.0),
        mask_fraction_seq=np.full(n, 0.1),
        flow_seq=np.full(n, 0.05),
        track_loss_seq=np.full(n, 0.05),
        track_median_move=0.2,
        vlm_answers=[False] * 8,
    )


# ---------------------------------------------------------------------------
# sigmoid smoothing


def test_smooth_margin_midpoint_and_saturation() -> None:
    assert smooth_margin(0.0) == pytest.approx(0.5)
    assert smooth_margin(1.0) == pytest.approx(1.0, abs=1e-9)
    assert smooth_margin(-1.0) == pytest.approx(0.0, abs=1e-9)


def test_smooth_margin_monotone() -> None:
    xs = np.linspace(-2.0, 2.0, 101)
    ys = [smooth_margin(float(x)) for x in xs]
    assert all(b >= a for a, b in zip(ys, ys[1:]))  # saturates flat at the tails
    assert all(0.0 <= y <= 1.0 for y in ys)
    core = [smooth_margin(float(x)) for x in np.linspace(-0.3, 0.3, 31)]
    assert all(b > a for a, b in zip(core, core[1:]))


def test_sigmoid_margin_orientation() -> None:
    assert sigmoid_margin(2.0, 1.0, pass_above=True) > 0.99
    assert sigmoid_margin(2.0, 1.0, pass_above=False) < 0.01
    assert sigmoid_margin(1.0, 1.0, pass_above=True) == pytest.approx(0.5)


def test_sigmoid_margin_zero_threshold_hard_decision() -> None:
    assert sigmoid_margin(0.5, 0.0, pass_above=True) == 1.0
    assert sigmoid_margin(-0.5, 0.0, pass_above=True) == 0.0
    assert sigmoid_margin(0.0, 0.0, pass_above=False) == 1.0


# ---------------------------------------------------------------------------
# component scores: worked values


def test_classifier_both_clear() -> None:
    assert score_classifier(0.70, 0.30) == pytest.approx(1.0, abs=1e-5)


def test_classifier_one_fails() -> None:
    assert score_classifier(0.40, 0.30) == pytest.approx(0.5, abs=1e-5)


def test_classifier_both_on_threshold() -> None:
    assert score_classifier(0.55, 0.20) == pytest.approx(0.5)


def test_distortion_values() -> None:
    assert score_distortion(0.50) == pytest.approx(1.0, abs=1e-5)
    assert score_distortion(1.20) == pytest.approx(0.0, abs=1e-4)
    assert score_distortion(1.00) == pytest.approx(0.5)
    with pytest.raises(InvalidInput):
        score_distortion(-0.1)


def test_focal_constant_short_lens() -> None:
    assert score_focal(np.full(31, 1000.0)) == pytest.approx(1.0, abs=1e-5)


def test_focal_constant_long_lens_fails_one_indicator() -> None:
    assert score_focal(np.full(31, 1500.0)) == pytest.approx(2.0 / 3.0, abs=0.02)


def test_focal_ramp_matches_independent_computation() -> None:
    seq = np.linspace(800.0, 1300.0, 25)
    fps = 6.0
    cfg = FilterConfig()
    spread = np.percentile(seq, 90) - np.percentile(seq, 10)
    s_spread = sigmoid_margin(spread, cfg.focal_spread_max * seq.mean(), pass_above=False)
    wlen = max(2, round(fps * cfg.window_seconds))
    worst = max(
        (seq[i : i + wlen].max() - seq[i : i + wlen].min()) / seq[i : i + wlen].min()
        for i in range(len(seq) - wlen + 1)
    )
    s_window = sigmoid_margin(worst, cfg.focal_window_change_max, pass_above=False)
    s_long = sigmoid_margin(np.percentile(seq, 80), cfg.focal_p80_max, pass_above=False)
    expected = (s_spread + s_window + s_long) / 3.0
    assert score_focal(seq, signal_fps=fps) == pytest.approx(expected, rel=1e-12)


def test_focal_series_too_short() -> None:
    with pytest.raises(SeriesTooShort):
        score_focal(np.array([900.0]))


def test_focal_rejects_non_positive() -> None:
    with pytest.raises(InvalidInput):
        score_focal(np.array([900.0, 0.0]))


def test_masking_values() -> None:
    assert score_masking(np.full(20, 0.50)) == pytest.approx(1.0, abs=1e-5)
    assert score_masking(np.full(20, 0.90)) == pytest.approx(0.0, abs=5e-3)
    assert score_masking(np.full(20, 0.80)) == pytest.approx(0.5)


def test_masking_validates_range() -> None:
    with pytest.raises(InvalidInput):
        score_masking(np.array([0.2, 1.2]))


def test_flow_values() -> None:
    assert score_flow(np.full(31, 0.030)) == pytest.approx(1.0, abs=1e-5)
    assert score_flow(np.full(31, 0.010)) == pytest.approx(2.0 / 3.0, abs=1e-4)


def test_flow_spike_matches_independent_computation() -> None:
    seq = np.full(31, 0.05)
    seq[15] = 0.60  # shot-change spike
    cfg = FilterConfig()
    s_mean = sigmoid_margin(seq.mean(), cfg.flow_mean_min, pass_above=True)
    s_spike = sigmoid_margin(
        seq.max(), seq.mean() + cfg.flow_spike_sigmas * seq.std(), pass_above=False
    )
    wlen = max(2, round(6.0 * cfg.window_seconds))
    worst = max(seq[i : i + wlen].mean() for i in range(len(seq) - wlen + 1))
    s_window = sigmoid_margin(worst, cfg.flow_window_mean_max, pass_above=False)
    expected = (s_mean + s_spike + s_window) / 3.0
    assert score_flow(seq) == pytest.approx(expected, rel=1e-12)
    assert score_flow(seq) < 0.75  # the spike indicator collapsed


def test_flow_constant_series_has_no_spike_penalty() -> None:
    # zero variance: the spike indicator passes by convention
    assert score_flow(np.full(31, 0.030)) == pytest.approx(1.0, abs=1e-5)


def test_tracking_values() -> None:
    assert score_tracking(np.full(20, 0.10), 0.12) == pytest.approx(1.0, abs=1e-5)
    # heavy loss kills exactly the survival indicator
    assert score_tracking(np.array([0.1, 0.8, 0.1]), 0.12) == pytest.approx(2.0 / 3.0, abs=1e-4)
    # a near-static scene kills both movement indicators
    assert score_tracking(np.full(20, 0.10), 0.01) == pytest.approx(1.0 / 3.0, abs=1e-4)


def test_tracking_windowed_move_falls_back() -> None:
    loss = np.full(10, 0.1)
    assert score_tracking(loss, 0.2) == score_tracking(loss, 0.2, windowed_median_move=0.2)
    assert score_tracking(loss, 0.2, windowed_median_move=0.01) < score_tracking(loss, 0.2)


def test_vlm_values() -> None:
    assert score_vlm([False] * 8) == 1.0
    assert score_vlm([False] * 7 + [True]) == 0.0
    with pytest.raises(InvalidInput):
        score_vlm([False] * 5)


def test_score_component_missing_signal() -> None:
    signals = healthy_signals()
    signals.flow_seq = None
    with pytest.raises(MissingSignal):
        score_component("flow", signals)
    with pytest.raises(InvalidInput):
        score_component("nonsense", signals)


def test_scores_stay_in_unit_interval() -> None:
    rng = np.random.default_rng(11)
    for _ in range(50):
        sig = FilterSignals(
            classifier_acceptable=float(rng.uniform(0, 1)),
            classifier_interaction=float(rng.uniform(0, 1)),
            distortion_alpha=float(rng.uniform(0, 3)),
            focal_seq=rng.uniform(200.0, 2500.0, 25),
            mask_fraction_seq=rng.uniform(0.0, 1.0, 25),
            flow_seq=rng.uniform(0.0, 0.5, 25),
            track_loss_seq=rng.uniform(0.0, 1.0, 25),
            track_median_move=float(rng.uniform(0, 0.5)),
            vlm_answers=[bool(rng.integers(0, 2)) for _ in range(8)],
        )
        score = score_video(sig)
        assert all(0.0 <= s <= 1.0 for s in score)
        assert 0.0 <= score.aggregate <= 1.0


# ---------------------------------------------------------------------------
# aggregation and cascade


def test_aggregate_worked_examples() -> None:
    good = FilterScore(1, 1, 1, 1, 1, 1, 0.5)
    assert good.aggregate == pytest.approx(6.5 / 7.0)
    assert aggregate(good, threshold=0.910)
    bad = FilterScore(1, 1, 1, 1, 1, 0.5, 0.5)
    assert bad.aggregate == pytest.approx(6.0 / 7.0)
    assert not aggregate(bad, threshold=0.910)


def test_cascade_accepts_healthy_video() -> None:
    decision = cascade(healthy_signals())
    assert decision.included
    assert decision.excluded_at_stage is None
    assert set(decision.scores) == set(COMPONENT_NAMES)


def test_cascade_early_exit_skips_later_signals() -> None:
    signals = healthy_signals()
    signals.flow_seq = np.full(31, 0.001)  # static video fails the first stage
    signals.classifier_acceptable = 0.1
    signals.focal_seq = np.full(31, 2000.0)
    # later-stage signals are absent; an early exit must never request them
    signals.mask_fraction_seq = None
    signals.vlm_answers = None
    decision = cascade(signals)
    assert not decision.included
    assert decision.excluded_at_stage == 0
    assert set(decision.scores) == {"classifier", "flow", "focal"}
    assert decision.running_mean < 0.70


def test_cascade_consistent_with_one_shot_for_passing_videos() -> None:
    signals = healthy_signals()
    decision = cascade(signals)
    score = score_video(signals)
    assert decision.running_mean == pytest.approx(score.aggregate, rel=1e-12)
    assert decision.included == aggregate(score)


def test_cascade_with_zero_thresholds_equals_one_shot() -> None:
    cfg = CascadeConfig(stage_thresholds=(0.0,) * len(CascadeConfig().stages))
    for kind in FIXTURE_KINDS:
        for seed in range(5):
            signals, _ = make_filter_fixture(kind, seed=seed)
            decision = cascade(signals, cfg)
            score = score_video(signals)
            assert decision.excluded_at_stage is None
            assert decision.included == aggregate(score)
            assert decision.running_mean == pytest.approx(score.aggregate, rel=1e-12)


def test_cascade_config_requires_full_coverage() -> None:
    with pytest.raises(InvalidInput):
        CascadeConfig(stages=(("classes",),))
    with pytest.raises(InvalidInput):
        CascadeConfig(stages=(COMPONENT_NAMES[:3], COMPONENT_NAMES[3:], ("vlm",)))


# ---------------------------------------------------------------------------
# precision/recall and average precision


def test_pr_curve_worked_example() -> None:
    points = pr_curve([0.9, 0.8, 0.7], [True, False, True])
    assert points == [
        PRPoint(0.5, 1.0, 0.9),
        PRPoint(0.5, 0.5, 0.8),
        PRPoint(1.0, 2.0 / 3.0, 0.7),
    ]


def test_pr_curve_groups_ties() -> None:
    points = pr_curve([0.9, 0.9, 0.1], [True, False, True])
    assert len(points) == 2
    assert points[0] == PRPoint(0.5, 0.5, 0.9)


def test_pr_curve_no_positives() -> None:
    with pytest.raises(NoPositives):
        pr_curve([0.9, 0.8], [False, False])


def test_pr_curve_validates_input() -> None:
    with pytest.raises(InvalidInput):
        pr_curve([0.9], [True, False])
    with pytest.raises(InvalidInput):
        pr_curve([], [])


def test_average_precision_worked_example() -> None:
    points = pr_curve([0.9, 0.8, 0.7], [True, False, True])
    assert average_precision(points) == pytest.approx(5.0 / 6.0, rel=1e-12)


def test_average_precision_perfect_ranking() -> None:
    points = pr_curve([0.9, 0.8, 0.2, 0.1], [True, True, False, False])
    assert average_precision(points) == pytest.approx(1.0)


def _naive_ap(scores: list[float], labels: list[bool]) -> float:
    """Quadratic reference: envelope precision integrated over distinct recalls."""
    total_pos = sum(labels)
    pts = []
    for t in sorted(set(scores), reverse=True):
        tp = sum(1 for s, l in zip(scores, labels) if s >= t and l)
        fp = sum(1 for s, l in zip(scores, labels) if s >= t and not l)
        pts.append((tp / total_pos, tp / (tp + fp)))
    ap = 0.0
    prev_r = 0.0
    for r in sorted({r for r, _ in pts}):
        ap += (r - prev_r) * max(p for rr, p in pts if rr >= r)
        prev_r = r
    return ap


def test_average_precision_matches_naive_reference() -> None:
    rng = np.random.default_rng(5)
    for trial in range(30):
        n = 50
        # draw from a coarse grid so score ties occur
        scores = [float(s) for s in rng.choice(np.linspace(0, 1, 12), n)]
        labels = [bool(l) for l in rng.integers(0, 2, n)]
        if not any(labels):
            labels[0] = True
        points = pr_curve(scores, labels)
        assert average_precision(points) == pytest.approx(
            _naive_ap(scores, labels), rel=1e-12, abs=1e-12
        )


def test_envelope_ap_at_least_step_ap() -> None:
    rng = np.random.default_rng(6)
    for _ in range(20):
        scores = [float(s) for s in rng.uniform(0, 1, 40)]
        labels = [bool(l) for l in rng.integers(0, 2, 40)]
        if not any(labels):
            labels[0] = True
        points = pr_curve(scores, labels)
        assert average_precision(points) >= step_average_precision(points) - 1e-12


def test_pr_curve_permutation_invariant() -> None:
    rng = np.random.default_rng(7)
    scores = [float(s) for s in rng.uniform(0, 1, 30)]
    labels = [bool(l) for l in rng.integers(0, 2, 30)]
    labels[3] = True
    base = pr_curve(scores, labels)
    perm = rng.permutation(30)
    shuffled = pr_curve([scores[i] for i in perm], [labels[i] for i in perm])
    assert base == shuffled


def test_pr_recall_monotone_along_curve() -> None:
    rng = np.random.default_rng(8)
    scores = [float(s) for s in rng.uniform(0, 1, 60)]
    labels = [bool(l) for l in rng.integers(0, 2, 60)]
    labels[0] = True
    points = pr_curve(scores, labels)
    recalls = [p.recall for p in points]
    assert recalls == sorted(recalls)
    assert recalls[-1] == pytest.approx(1.0)
