"""Trajectory and correspondence quality metrics.

ATE/RPE with similarity alignment and failure fill-in, per-video Sampson
reprojection evaluation in 720p-normalized coordinates with degenerate
handling, and the 10 px human-annotation gate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import Degenerate, DegenerateGeometry, InvalidInput, NoPairs
from .geometry import (
    Intrinsics,
    Pose,
    Similarity,
    Trajectory,
    fundamental_from_relpose,
    relative_pose,
    rotation_angle_deg,
    sampson_error,
    umeyama_align,
)

DEFAULT_SAMPSON_THRESHOLDS = (5.0, 10.0, 30.0)
WIDE_SAMPSON_THRESHOLDS = (15.0, 30.0, 60.0)
GATE_RADIUS_PX = 10.0


@dataclass(frozen=True)
class AnnotatedPair:
    """A human-annotated correspondence between two frames of one video.

    Points live in 720p-normalized pixel coordinates (frame height scaled to
    720 with aspect preserved).
    """

    video: str
    frame_a: int
    frame_b: int
    point_a: tuple[float, float]
    point_b: tuple[float, float]

    def validate(self, fps: float, max_gap_seconds: float = 2.5) -> None:
        """Check the frame gap against the annotation protocol's time budget."""
        if abs(self.frame_a - self.frame_b) > max_gap_seconds * fps:
            raise InvalidInput(
                f"pair spans {abs(self.frame_a - self.frame_b)} frames, "
                f"more than {max_gap_seconds} s at {fps} fps"
            )


@dataclass
class TrajectoryReport:
    ate: float
    rpe_trans: float
    rpe_rot: float
    registered_fraction: float


@dataclass
class SampsonReport:
    video: str
    mean_error: float
    errors: np.ndarray  # per-pair
    threshold_pass: dict[float, bool] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# trajectory completion
# ---------------------------------------------------------------------------

def fill_trajectory(pred: Trajectory, total_frames: int) -> Trajectory:
    """Complete a trajectory over frames 0..total_frames-1.

    Missing frames copy the nearest registered pose (ties go to the earlier
    frame); a trajectory with nothing registered becomes identity throughout.
    Registered poses are never altered.
    """
    if total_frames <= 0:
        raise InvalidInput("total_frames must be positive")
    known = {f: p for f, p in pred.frames if p is not None}
    frames: list[tuple[int, Pose | None]] = []
    if not known:
        ident = Pose.identity()
        return Trajectory(frames=[(f, ident) for f in range(total_frames)], fps=pred.fps)
    reg_ids = np.array(sorted(known.keys()))
    for f in range(total_frames):
        if f in known:
            frames.append((f, known[f]))
            continue
        dist = np.abs(reg_ids - f)
        best = np.flatnonzero(dist == dist.min())
        src = int(reg_ids[best[0]])  # reg_ids sorted, so first minimum = earlier frame
        frames.append((f, known[src]))
    return Trajectory(frames=frames, fps=pred.fps)


def random_fill(total_frames: int, seed: int = 0, fps: float = 12.0) -> Trajectory:
    """Identity rotations with translations i.i.d. uniform in [-1, 1]^3."""
    if total_frames <= 0:
        raise InvalidInput("total_frames must be positive")
    rng = np.random.default_rng(seed)
    ident_q = np.array([0.0, 0.0, 0.0, 1.0])
    frames = [
        (f, Pose(ident_q, rng.uniform(-1.0, 1.0, size=3))) for f in range(total_frames)
    ]
    return Trajectory(frames=frames, fps=fps)


# ---------------------------------------------------------------------------
# ATE / RPE
# ---------------------------------------------------------------------------

def _aligned_pred(gt: Trajectory, pred: Trajectory) -> tuple[list[int], list[Pose], list[Pose], Similarity]:
    try:
        sim = umeyama_align(pred, gt, with_scale=True)
    except DegenerateGeometry:
        # collinear or collapsed centers (straight camera paths, identity
        # fills): the closed form still gives a least-squares alignment —
        # the free rotation about a line never moves points on that line
        gt_k = {f: p for f, p in gt.frames if p is not None}
        pred_k = {f: p for f, p in pred.frames if p is not None}
        shared = [f for f in pred.frame_ids if f in gt_k and f in pred_k]
        a = np.stack([pred_k[f].center for f in shared])
        b = np.stack([gt_k[f].center for f in shared])
        mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
        xa, xb = a - mu_a, b - mu_b
        cov = xb.T @ xa / len(shared)
        u, d, vt = np.linalg.svd(cov)
        s_fix = np.eye(3)
        if np.linalg.det(u) * np.linalg.det(vt) < 0.0:
            s_fix[2, 2] = -1.0
        var_a = float((xa ** 2).sum()) / len(shared)
        scale = (
            float(np.trace(np.diag(d) @ s_fix)) / var_a if var_a > 1e-300 else 1.0
        )
        rot = u @ s_fix @ vt
        sim = Similarity(
            scale=scale, rotation=rot, translation=mu_b - scale * (rot @ mu_a)
        )
    gt_known = {f: p for f, p in gt.frames if p is not None}
    pred_known = {f: p for f, p in pred.frames if p is not None}
    shared = [f for f in pred.frame_ids if f in gt_known and f in pred_known]
    gt_poses = [gt_known[f] for f in shared]
    aligned = []
    for f in shared:
        p = pred_known[f]
        r_new = p.rotation @ sim.rotation.T
        c_new = sim.apply(p.center[None, :])[0]
        aligned.append(Pose.from_rt(r_new, -r_new @ c_new))
    return shared, gt_poses, aligned, sim


def ate(gt: Trajectory, pred: Trajectory) -> float:
    """RMSE of camera positions after similarity alignment of pred onto gt."""
    _, gt_poses, aligned, _ = _aligned_pred(gt, pred)
    d = np.stack([a.center - g.center for a, g in zip(aligned, gt_poses)])
    return float(np.sqrt((d * d).sum(axis=1).mean()))


def rpe(gt: Trajectory, pred: Trajectory, align: bool = True) -> tuple[float, float]:
    """Mean relative-pose errors over consecutive frames: (trans, rot degrees).

    By default the same similarity alignment as :func:`ate` is applied first.
    """
    if align:
        shared, gt_poses, aligned, _ = _aligned_pred(gt, pred)
    else:
        gt_known = {f: p for f, p in gt.frames if p is not None}
        pred_known = {f: p for f, p in pred.frames if p is not None}
        shared = [f for f in pred.frame_ids if f in gt_known and f in pred_known]
        gt_poses = [gt_known[f] for f in shared]
        aligned = [pred_known[f] for f in shared]
    if len(shared) < 2:
        raise InvalidInput("relative pose error needs at least two shared frames")
    t_errs = []
    r_errs = []
    for a in range(len(shared) - 1):
        rel_gt = relative_pose(gt_poses[a], gt_poses[a + 1])
        rel_pr = relative_pose(aligned[a], aligned[a + 1])
        t_errs.append(float(np.linalg.norm(rel_pr.t - rel_gt.t)))
        r_errs.append(rotation_angle_deg(rel_pr.rotation, rel_gt.rotation))
    return float(np.mean(t_errs)), float(np.mean(r_errs))


def evaluate_trajectory(gt: Trajectory, pred: Trajectory, total_frames: int) -> TrajectoryReport:
    """Fill the prediction, then report ATE, RPE and the registered fraction."""
    frac = pred.registered_fraction
    filled = fill_trajectory(pred, total_frames)
    ate_v = ate(gt, filled)
    rpe_t, rpe_r = rpe(gt, filled)
    return TrajectoryReport(ate=ate_v, rpe_trans=rpe_t, rpe_rot=rpe_r, registered_fraction=frac)


# ---------------------------------------------------------------------------
# Sampson evaluation
# ---------------------------------------------------------------------------

def sampson_eval(
    pred: Trajectory,
    k: Intrinsics,
    pairs: list[AnnotatedPair],
    thresholds: tuple[float, ...] = DEFAULT_SAMPSON_THRESHOLDS,
) -> SampsonReport:
    """Mean square-root Sampson error of annotated pairs under predicted poses.

    Intrinsics are rescaled so the frame height is 720 (annotation coordinate
    convention). A degenerate pair (identity relative pose) falls back to the
    straight point distance. The trajectory must already be filled.
    """
    if not pairs:
        raise NoPairs("video has no annotated pairs")
    video = pairs[0].video
    scale = 720.0 / k.height
    k720 = k.scaled(scale, scale)
    known = dict(pred.frames)
    errors = np.empty(len(pairs))
    for n, pair in enumerate(pairs):
        if pair.video != video:
            raise InvalidInput("sampson_eval expects pairs from a single video")
        pa = np.asarray(pair.point_a, dtype=np.float64)
        pb = np.asarray(pair.point_b, dtype=np.float64)
        pose_a = known.get(pair.frame_a)
        pose_b = known.get(pair.frame_b)
        if pose_a is None or pose_b is None:
            raise InvalidInput(
                f"frames {pair.frame_a},{pair.frame_b} not registered; fill the trajectory first"
            )
        rel = relative_pose(pose_a, pose_b)
        try:
            f = fundamental_from_relpose(k720, k720, rel)
            errors[n] = float(np.sqrt(sampson_error(f, pa, pb)))
        except Degenerate:
            errors[n] = float(np.linalg.norm(pb - pa))
    mean = float(errors.mean())
    return SampsonReport(
        video=video,
        mean_error=mean,
        errors=errors,
        threshold_pass={float(t): bool(mean < t) for t in thresholds},
    )


def sampson_accuracy(
    reports: list[SampsonReport],
    thresholds: tuple[float, ...] = DEFAULT_SAMPSON_THRESHOLDS,
) -> dict[float, float]:
    """Fraction of videos whose mean error clears each threshold."""
    if not reports:
        raise NoPairs("no per-video reports to aggregate")
    return {
        float(t): float(np.mean([r.mean_error < t for r in reports])) for t in thresholds
    }


# ---------------------------------------------------------------------------
# annotation gating
# ---------------------------------------------------------------------------

def correspondence_gate(
    human: AnnotatedPair,
    refined_candidates: list[tuple[float, float, float, float]],
) -> AnnotatedPair | None:
    """Replace a human pair by the refined match within 10 px of both points.

    Candidates are (xa, ya, xb, yb). Among qualifying candidates the one with
    the smallest summed endpoint distance wins; ``None`` means rejection.
    """
    ha = np.asarray(human.point_a)
    hb = np.asarray(human.point_b)
    best = None
    best_sum = np.inf
    for xa, ya, xb, yb in refined_candidates:
        da = float(np.hypot(xa - ha[0], ya - ha[1]))
        db = float(np.hypot(xb - hb[0], yb - hb[1]))
        if da <= GATE_RADIUS_PX and db <= GATE_RADIUS_PX and da + db < best_sum:
            best_sum = da + db
            best = (xa, ya, xb, yb)
    if best is None:
        return None
    return AnnotatedPair(
        video=human.video,
        frame_a=human.frame_a,
        frame_b=human.frame_b,
        point_a=(best[0], best[1]),
        point_b=(best[2], best[3]),
    )
