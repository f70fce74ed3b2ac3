"""Multi-signal suitability scoring for video curation.

Seven component scores (classifier, distortion, focal, masking, flow,
tracking, vlm) are computed from measured signals. Each numeric indicator is
smoothed with a sigmoid over its relative margin to the pass threshold,
indicators average into a component, components average into the aggregate,
and a video is kept when the aggregate clears the final threshold. A staged
cascade evaluates cheap components first and abandons a video early when the
running mean drops below a stage threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import InvalidInput, MissingSignal, NoPositives, SeriesTooShort

COMPONENT_NAMES = ("classifier", "distortion", "focal", "masking", "flow", "tracking", "vlm")


@dataclass(frozen=True)
class FilterConfig:
    """Pass/fail thresholds for every indicator plus decision constants."""

    sigmoid_slope: float = 50.0
    classifier_acceptable_min: float = 0.55
    classifier_interaction_min: float = 0.20
    distortion_alpha_max: float = 1.00
    focal_spread_max: float = 0.40  # (p90 - p10) as a fraction of the mean
    focal_window_change_max: float = 0.20  # (max-min)/min inside a 1-s window
    focal_p80_max: float = 1400.0
    mask_p90_max: float = 0.80
    flow_mean_min: float = 0.02127
    flow_spike_sigmas: float = 4.0
    flow_window_mean_max: float = 0.15
    track_loss_max: float = 0.50
    track_move_min: float = 0.05
    window_seconds: float = 1.0
    final_threshold: float = 0.910
    stage_threshold: float = 0.70


DEFAULT_FILTER_CONFIG = FilterConfig()

# cheap signals first; each stage gates on the running mean of everything
# computed so far, so expensive stages never run for clearly bad videos
DEFAULT_STAGE_COMPONENTS: tuple[tuple[str, ...], ...] = (
    ("classifier", "flow", "focal"),
    ("distortion",),
    ("tracking",),
    ("masking",),
    ("vlm",),
)


@dataclass
class FilterSignals:
    """Measured per-video signals; ``None`` marks a signal that was never computed."""

    classifier_acceptable: float | None = None
    classifier_interaction: float | None = None
    distortion_alpha: float | None = None
    focal_seq: np.ndarray | None = None
    mask_fraction_seq: np.ndarray | None = None
    flow_seq: np.ndarray | None = None
    track_loss_seq: np.ndarray | None = None
    track_median_move: float | None = None
    track_windowed_move: float | None = None
    vlm_answers: list[bool] | None = None
    signal_fps: float = 6.0

    def __post_init__(self):
        for name in ("focal_seq", "mask_fraction_seq", "flow_seq", "track_loss_seq"):
            v = getattr(self, name)
            if v is not None:
                arr = np.asarray(v, dtype=np.float64)
                if arr.ndim != 1 or arr.size == 0:
                    raise InvalidInput(f"{name} must be a non-empty 1-D sequence")
                setattr(self, name, arr)
        if self.signal_fps <= 0:
            raise InvalidInput("signal_fps must be positive")
        for name in ("classifier_acceptable", "classifier_interaction"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise InvalidInput(f"{name} must lie in [0, 1]")
        if self.distortion_alpha is not None and self.distortion_alpha < 0.0:
            raise InvalidInput("distortion_alpha must be non-negative")
        if self.mask_fraction_seq is not None and (
            self.mask_fraction_seq.min() < 0.0 or self.mask_fraction_seq.max() > 1.0
        ):
            raise InvalidInput("mask fractions must lie in [0, 1]")
        if self.track_loss_seq is not None and (
            self.track_loss_seq.min() < 0.0 or self.track_loss_seq.max() > 1.0
        ):
            raise InvalidInput("track loss fractions must lie in [0, 1]")
        if self.vlm_answers is not None and len(self.vlm_answers) != 8:
            raise InvalidInput("vlm_answers must contain exactly 8 booleans")


class FilterScore(NamedTuple):
    """Per-component scores in [0, 1]; aggregate is their arithmetic mean."""

    classifier: float
    distortion: float
    focal: float
    masking: float
    flow: float
    tracking: float
    vlm: float

    @property
    def aggregate(self) -> float:
        return sum(self) / len(self)


def smooth_margin(signed_margin: float, slope: float = 50.0) -> float:
    """Logistic smoothing of a pass margin: ``1/(1+exp(-slope*margin))``.

    The margin is (measurement − threshold)/threshold, sign-oriented so
    positive means pass; 0.5 sits exactly on the threshold. The default slope
    saturates within ~1e-4 once |margin| exceeds 0.2.
    """
    x = slope * signed_margin
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def sigmoid_margin(measurement: float, threshold: float, *, pass_above: bool, slope: float = 50.0) -> float:
    """Smoothed pass score of a measurement against its threshold."""
    if threshold <= 0.0:
        # degenerate threshold: fall back to a hard decision
        ok = measurement >= threshold if pass_above else measurement <= threshold
        return 1.0 if ok else 0.0
    margin = (measurement - threshold) / threshold
    if not pass_above:
        margin = -margin
    return smooth_margin(margin, slope)


def _percentile(seq: np.ndarray, q: float) -> float:
    # linear interpolation between order statistics
    return float(np.percentile(np.asarray(seq, dtype=np.float64), q, method="linear"))


def _window_length(fps: float, seconds: float) -> int:
    return max(2, int(round(fps * seconds)))


def _sliding_windows(seq: np.ndarray, length: int) -> Iterable[np.ndarray]:
    n = len(seq)
    if n <= length:
        yield seq
        return
    for i in range(n - length + 1):
        yield seq[i : i + length]


def score_classifier(acceptable: float, interaction: float, config: FilterConfig = DEFAULT_FILTER_CONFIG) -> float:
    """Frame-classifier component: scene-acceptability and interaction likelihood."""
    s1 = sigmoid_margin(acceptable, config.classifier_acceptable_min, pass_above=True, slope=config.sigmoid_slope)
    s2 = sigmoid_margin(interaction, config.classifier_interaction_min, pass_above=True, slope=config.sigmoid_slope)
    return (s1 + s2) / 2.0


def score_distortion(alpha: float, config: FilterConfig = DEFAULT_FILTER_CONFIG) -> float:
    """Lens-distortion component: estimated distortion coefficient must stay small."""
    if alpha < 0.0:
        raise InvalidInput("distortion coefficient must be non-negative")
    return sigmoid_margin(alpha, config.distortion_alpha_max, pass_above=False, slope=config.sigmoid_slope)


def score_focal(
    focal_seq: np.ndarray,
    signal_fps: float = 6.0,
    config: FilterConfig = DEFAULT_FILTER_CONFIG,
) -> float:
    """Focal-stability component: percentile spread, in-window change, long-lens cap.

    Indicators: (p90 - p10) within 40% of the mean; relative (max-min)/min
    change within any 1-second window at most 20%; 80th percentile at most
    1400 pixels.
    """
    seq = np.asarray(focal_seq, dtype=np.float64)
    if seq.ndim != 1 or seq.size < 2:
        raise SeriesTooShort("focal_seq needs at least 2 samples")
    if seq.min() <= 0.0:
        raise InvalidInput("focal lengths must be positive")
    k = config.sigmoid_slope
    spread = _percentile(seq, 90) - _percentile(seq, 10)
    s_spread = sigmoid_margin(spread, config.focal_spread_max * float(seq.mean()), pass_above=False, slope=k)
    wlen = _window_length(signal_fps, config.window_seconds)
    worst = max(float((w.max() - w.min()) / w.min()) for w in _sliding_windows(seq, wlen))
    s_window = sigmoid_margin(worst, config.focal_window_change_max, pass_above=False, slope=k)
    s_long = sigmoid_margin(_percentile(seq, 80), config.focal_p80_max, pass_above=False, slope=k)
    return (s_spread + s_window + s_long) / 3.0


def score_masking(mask_fraction_seq: np.ndarray, config: FilterConfig = DEFAULT_FILTER_CONFIG) -> float:
    """Dynamic-coverage component: 90th percentile of masked area must stay under 80%."""
    seq = np.asarray(mask_fraction_seq, dtype=np.float64)
    if seq.ndim != 1 or seq.size == 0:
        raise InvalidInput("mask_fraction_seq must be a non-empty 1-D sequence")
    if seq.min() < 0.0 or seq.max() > 1.0:
        raise InvalidInput("mask fractions must lie in [0, 1]")
    return sigmoid_margin(_percentile(seq, 90), config.mask_p90_max, pass_above=False, slope=config.sigmoid_slope)


def score_flow(
    flow_seq: np.ndarray,
    signal_fps: float = 6.0,
    config: FilterConfig = DEFAULT_FILTER_CONFIG,
) -> float:
    """Optical-flow component: enough motion, no shot-change spike, no sustained blur.

    Indicators: mean flow at least 2.127% of the frame diagonal; the peak
    value within mean + 4 sigma (a constant series trivially passes); the
    mean inside any 1-second window at most 15%.
    """
    seq = np.asarray(flow_seq, dtype=np.float64)
    if seq.ndim != 1 or seq.size == 0:
        raise InvalidInput("flow_seq must be a non-empty 1-D sequence")
    if seq.min() < 0.0:
        raise InvalidInput("flow magnitudes must be non-negative")
    k = config.sigmoid_slope
    mean = float(seq.mean())
    s_mean = sigmoid_margin(mean, config.flow_mean_min, pass_above=True, slope=k)
    sigma = float(seq.std())
    if sigma <= 1e-12 * max(mean, 1e-12):
        # numerically constant series (rounding can leave std at ~1e-18):
        # no variation, trivially no spike
        s_spike = smooth_margin(1.0, k)
    else:
        s_spike = sigmoid_margin(
            float(seq.max()), mean + config.flow_spike_sigmas * sigma, pass_above=False, slope=k
        )
    wlen = _window_length(signal_fps, config.window_seconds)
    worst = max(float(w.mean()) for w in _sliding_windows(seq, wlen))
    s_window = sigmoid_margin(worst, config.flow_window_mean_max, pass_above=False, slope=k)
    return (s_mean + s_spike + s_window) / 3.0


def score_tracking(
    loss_seq: np.ndarray,
    median_move: float,
    windowed_median_move: float | None = None,
    config: FilterConfig = DEFAULT_FILTER_CONFIG,
) -> float:
    """Point-track component: tracks must survive and must actually move.

    Indicators: worst per-frame loss fraction at most 50%; median net track
    displacement (frame-diagonal fraction) at least 5%, both overall and
    within the best 1-second window (falls back to the overall value when the
    windowed statistic was not measured).
    """
    seq = np.asarray(loss_seq, dtype=np.float64)
    if seq.ndim != 1 or seq.size == 0:
        raise InvalidInput("loss_seq must be a non-empty 1-D sequence")
    if seq.min() < 0.0 or seq.max() > 1.0:
        raise InvalidInput("loss fractions must lie in [0, 1]")
    if median_move < 0.0:
        raise InvalidInput("median_move must be non-negative")
    k = config.sigmoid_slope
    s_loss = sigmoid_margin(float(seq.max()), config.track_loss_max, pass_above=False, slope=k)
    s_move = sigmoid_margin(median_move, config.track_move_min, pass_above=True, slope=k)
    windowed = median_move if windowed_median_move is None else windowed_median_move
    s_window = sigmoid_margin(windowed, config.track_move_min, pass_above=True, slope=k)
    return (s_loss + s_move + s_window) / 3.0


def score_vlm(answers: Sequence[bool]) -> float:
    """Visual-QA component: eight yes/no defect questions; any yes rejects outright."""
    if len(answers) != 8:
        raise InvalidInput("expected exactly 8 yes/no answers")
    return 0.0 if any(answers) else 1.0


_REQUIRED_SIGNALS: dict[str, tuple[str, ...]] = {
    "classifier": ("classifier_acceptable", "classifier_interaction"),
    "distortion": ("distortion_alpha",),
    "focal": ("focal_seq",),
    "masking": ("mask_fraction_seq",),
    "flow": ("flow_seq",),
    "tracking": ("track_loss_seq", "track_median_move"),
    "vlm": ("vlm_answers",),
}


def score_component(name: str, signals: FilterSignals, config: FilterConfig = DEFAULT_FILTER_CONFIG) -> float:
    """Compute one named component score, raising MissingSignal when inputs are absent."""
    if name not in _REQUIRED_SIGNALS:
        raise InvalidInput(f"unknown component '{name}'")
    for fld in _REQUIRED_SIGNALS[name]:
        if getattr(signals, fld) is None:
            raise MissingSignal(name, fld)
    if name == "classifier":
        return score_classifier(signals.classifier_acceptable, signals.classifier_interaction, config)
    if name == "distortion":
        return score_distortion(signals.distortion_alpha, config)
    if name == "focal":
        return score_focal(signals.focal_seq, signal_fps=signals.signal_fps, config=config)
    if name == "masking":
        return score_masking(signals.mask_fraction_seq, config)
    if name == "flow":
        return score_flow(signals.flow_seq, signal_fps=signals.signal_fps, config=config)
    if name == "tracking":
        return score_tracking(
            signals.track_loss_seq, signals.track_median_move, signals.track_windowed_move, config
        )
    return score_vlm(signals.vlm_answers)


def score_video(signals: FilterSignals, config: FilterConfig = DEFAULT_FILTER_CONFIG) -> FilterScore:
    """All seven component scores for one video."""
    return FilterScore(**{name: score_component(name, signals, config) for name in COMPONENT_NAMES})


def aggregate(score: FilterScore, threshold: float = 0.910) -> bool:
    """Final include/exclude decision: mean component score against the threshold."""
    return score.aggregate >= threshold


@dataclass(frozen=True)
class CascadeConfig:
    """Stage layout for early-exit evaluation; stages must cover all components."""

    stages: tuple[tuple[str, ...], ...] = DEFAULT_STAGE_COMPONENTS
    stage_thresholds: tuple[float, ...] | None = None  # None -> 0.70 everywhere
    final_threshold: float = 0.910

    def __post_init__(self):
        flat = [c for stage in self.stages for c in stage]
        if sorted(flat) != sorted(COMPONENT_NAMES):
            raise InvalidInput("cascade stages must cover each component exactly once")
        if self.stage_thresholds is None:
            object.__setattr__(self, "stage_thresholds", (0.70,) * len(self.stages))
        elif len(self.stage_thresholds) != len(self.stages):
            raise InvalidInput("need one stage threshold per stage")


@dataclass
class CascadeDecision:
    included: bool
    scores: dict[str, float]  # components actually computed
    running_mean: float  # mean over computed components at the decision point
    excluded_at_stage: int | None  # stage index for an early exit, else None


def cascade(
    signals: FilterSignals,
    config: CascadeConfig = CascadeConfig(),
    filter_config: FilterConfig = DEFAULT_FILTER_CONFIG,
) -> CascadeDecision:
    """Staged evaluation: stop early when the running mean falls below the stage gate.

    Later-stage signals stay unevaluated after an early exit. With stage
    thresholds at 0 this reduces exactly to the one-shot ``score_video`` +
    final-threshold decision.
    """
    computed: dict[str, float] = {}
    running = 0.0
    for stage_idx, stage in enumerate(config.stages):
        for name in stage:
            computed[name] = score_component(name, signals, filter_config)
        running = sum(computed.values()) / len(computed)
        if running < config.stage_thresholds[stage_idx]:
            return CascadeDecision(False, computed, running, stage_idx)
    return CascadeDecision(running >= config.final_threshold, computed, running, None)


class PRPoint(NamedTuple):
    recall: float
    precision: float
    threshold: float


def pr_curve(scores: Sequence[float], labels: Sequence[bool]) -> list[PRPoint]:
    """Precision/recall at every distinct score threshold, descending.

    At threshold t a video is predicted positive when ``score >= t``.
    """
    if len(scores) != len(labels):
        raise InvalidInput("scores and labels must be parallel")
    if len(scores) == 0:
        raise InvalidInput("empty score set")
    total_pos = sum(1 for l in labels if l)
    if total_pos == 0:
        raise NoPositives("no positive labels; recall undefined")
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    points: list[PRPoint] = []
    tp = fp = 0
    i = 0
    while i < len(order):
        t = scores[order[i]]
        while i < len(order) and scores[order[i]] == t:
            if labels[order[i]]:
                tp += 1
            else:
                fp += 1
            i += 1
        points.append(PRPoint(recall=tp / total_pos, precision=tp / (tp + fp), threshold=t))
    return points


def average_precision(points: Sequence[PRPoint | tuple[float, float]]) -> float:
    """Area under the smoothed precision envelope.

    The precision at recall r is replaced by the maximum precision among all
    points with recall >= r, then integrated over the distinct recall values.
    """
    if not points:
        raise InvalidInput("empty precision/recall curve")
    rp = [(float(p[0]), float(p[1])) for p in points]
    recalls = sorted({r for r, _ in rp})
    ap = 0.0
    prev_r = 0.0
    for r in recalls:
        p_env = max(p for rr, p in rp if rr >= r)
        ap += (r - prev_r) * p_env
        prev_r = r
    return ap


def step_average_precision(points: Sequence[PRPoint | tuple[float, float]]) -> float:
    """Unsmoothed step integration in curve order (diagnostic baseline)."""
    if not points:
        raise InvalidInput("empty precision/recall curve")
    ap = 0.0
    prev_r = 0.0
    for p in points:
        r, prec = float(p[0]), float(p[1])
        ap += (r - prev_r) * prec
        prev_r = r
    return ap
