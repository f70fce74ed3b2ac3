"""Headline acceptance checks for the whole library.

Every test prints one ``[acceptance] <name>: PASS|FAIL (<detail>)`` summary
line (run pytest with ``-s`` to see them) and then asserts. The shared
20-scene benchmark fixture drives the two end-to-end pose checks; the
remaining tests verify the numeric machinery against independently coded
oracles.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from dynsfm import pipeline_io
from dynsfm.errors import ParseError
from dynsfm.evalmetrics import (
    AnnotatedPair,
    ate,
    evaluate_trajectory,
    fill_trajectory,
    random_fill,
    rpe,
    sampson_eval,
)
from dynsfm.filtering import (
    COMPONENT_NAMES,
    CascadeConfig,
    FilterSignals,
    average_precision,
    cascade,
    pr_curve,
    score_video,
)
from dynsfm.geometry import (
    Intrinsics,
    Pose,
    Similarity,
    Trajectory,
    sampson_error,
    so3_exp,
)
from dynsfm.kernels import reproj_residual_jacobian, sampson_batch
from dynsfm.masking import DynamicMask, FlowField
from dynsfm.sfm import Landmark, SceneModel, SfmConfig, bundle_adjust, run_pipeline
from dynsfm.synthbench import (
    FIXTURE_KINDS,
    SynthConfig,
    gen_scene,
    make_filter_fixture,
    project_tracks,
)
from dynsfm.tracking import Tracklet, extract_correspondences

N_SCENES = 20
SCENE_KINDS = ("orbit", "forward_arc", "pan")
K_VGA = Intrinsics(fx=600.0, fy=600.0, cx=320.0, cy=240.0, width=640, height=480)


def _report(name: str, ok: bool, detail: str) -> None:
    print(f"[acceptance] {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{name}: {detail}"


def _model_ate(gt: Trajectory, model: SceneModel, total_frames: int) -> float:
    if model.failed:
        return float("inf")
    return evaluate_trajectory(gt, model.trajectory, total_frames).ate


# ---------------------------------------------------------------------------
# shared 20-scene benchmark
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def benchmark():
    """ATE of the full pipeline on 20 seeded dynamic scenes.

    Per seed: a clean masked run, a 0.5 px noisy masked run (both timed), and
    a clean run with the dynamic masks withheld (the ablation).
    """
    cfg = SfmConfig(max_pair_gap=8, ransac_threshold_px=2.0)
    extents = np.empty(N_SCENES)
    ate_clean = np.empty(N_SCENES)
    ate_noisy = np.empty(N_SCENES)
    ate_maskless = np.empty(N_SCENES)
    runtime = 0.0
    for seed in range(N_SCENES):
        scene_cfg = SynthConfig(
            n_static=70,
            n_dynamic=30,
            num_frames=60,
            dynamic_amplitude=0.05,
            dynamic_motion="linear",
            trajectory_kind=SCENE_KINDS[seed % 3],
        )
        scene = gen_scene(seed, scene_cfg)
        gt = scene.gt_trajectory
        centers = np.stack([p.center for _, p in gt.frames])
        extents[seed] = np.linalg.norm(centers.max(axis=0) - centers.min(axis=0))
        clean = project_tracks(scene, noise_px=0.0, seed=seed, build_flows=False)
        noisy = project_tracks(scene, noise_px=0.5, seed=seed, build_flows=False)
        for out, tracks in ((ate_clean, clean), (ate_noisy, noisy)):
            start = time.perf_counter()
            model = run_pipeline(
                tracks.tracklets, tracks.masks, scene.intrinsics,
                config=cfg, seed=seed, fps=scene.fps,
            )
            runtime += time.perf_counter() - start
            out[seed] = _model_ate(gt, model, scene.num_frames)
        ablated = run_pipeline(
            clean.tracklets, None, scene.intrinsics, config=cfg, seed=seed, fps=scene.fps
        )
        ate_maskless[seed] = _model_ate(gt, ablated, scene.num_frames)
    return {
        "extents": extents,
        "ate_clean": ate_clean,
        "ate_noisy": ate_noisy,
        "ate_maskless": ate_maskless,
        "runtime": runtime,
    }


def test_end_to_end_pose_accuracy(benchmark) -> None:
    clean_max = float(benchmark["ate_clean"].max())
    noisy_rel = benchmark["ate_noisy"] / benchmark["extents"]
    noisy_max = float(noisy_rel.max())
    runtime = benchmark["runtime"]
    ok = clean_max < 1e-4 and noisy_max < 0.01 and runtime < 60.0
    _report(
        "end-to-end pose accuracy",
        ok,
        f"20 scenes: clean ATE max {clean_max:.2e} < 1e-4, "
        f"noisy ATE max {noisy_max * 100:.3f}% of extent < 1%, "
        f"40 masked runs in {runtime:.1f}s < 60s",
    )


def test_withholding_masks_degrades_accuracy(benchmark) -> None:
    masked = benchmark["ate_clean"]
    maskless = benchmark["ate_maskless"]
    worse = int(np.sum(maskless > masked))
    ok = bool(np.all(np.isfinite(masked))) and worse >= 18
    _report(
        "masking ablation",
        ok,
        f"maskless ATE strictly worse on {worse}/20 scenes (need >= 18); "
        f"median blow-up {np.median(maskless / masked):.1f}x",
    )


# ---------------------------------------------------------------------------
# Sampson machinery vs a naive reimplementation
# ---------------------------------------------------------------------------


def _naive_sampson(f: np.ndarray, p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    """Textbook formula on homogeneous points, vectorized independently."""
    x1 = np.concatenate([p1, np.ones((len(p1), 1))], axis=1)
    x2 = np.concatenate([p2, np.ones((len(p2), 1))], axis=1)
    fx1 = x1 @ f.T
    ftx2 = x2 @ f
    num = np.sum(x2 * fx1, axis=1) ** 2
    den = fx1[:, 0] ** 2 + fx1[:, 1] ** 2 + ftx2[:, 0] ** 2 + ftx2[:, 1] ** 2
    return num / den


def test_sampson_error_matches_naive_formula() -> None:
    rng = np.random.default_rng(5)
    n_mats, n_pts = 100, 1000
    worst = 0.0
    for _ in range(n_mats):
        f = rng.normal(0.0, 1.0, (3, 3))
        p1 = rng.uniform(-400.0, 400.0, (n_pts, 2))
        p2 = rng.uniform(-400.0, 400.0, (n_pts, 2))
        expected = _naive_sampson(f, p1, p2)
        batch = sampson_batch(f, p1, p2)
        scalars = np.array([sampson_error(f, a, b) for a, b in zip(p1, p2)])
        dev = np.abs(batch - expected) / np.maximum(1.0, np.abs(expected))
        dev_s = np.abs(scalars - expected) / np.maximum(1.0, np.abs(expected))
        worst = max(worst, float(dev.max()), float(dev_s.max()))

    # identity relative pose: the degenerate rule is the plain point distance
    ident = Trajectory(frames=[(0, Pose.identity()), (1, Pose.identity())], fps=12.0)
    k720 = Intrinsics(fx=800.0, fy=800.0, cx=640.0, cy=360.0, width=1280, height=720)
    pa = rng.uniform(0.0, 1280.0, (1000, 2))
    pb = rng.uniform(0.0, 1280.0, (1000, 2))
    pairs = [
        AnnotatedPair("vid", 0, 1, (a[0], a[1]), (b[0], b[1])) for a, b in zip(pa, pb)
    ]
    report = sampson_eval(ident, k720, pairs)
    ident_dev = float(np.abs(report.errors - np.linalg.norm(pb - pa, axis=1)).max())
    canon = sampson_eval(
        ident, k720, [AnnotatedPair("vid", 0, 1, (100.0, 100.0), (110.0, 100.0))]
    )
    ok = worst <= 1e-12 and ident_dev <= 1e-12 and canon.mean_error == 10.0
    _report(
        "sampson error oracle",
        ok,
        f"1e5 random inputs: max relative dev {worst:.1e} <= 1e-12; "
        f"identity-pose rule = point distance (max dev {ident_dev:.1e}), 10px canon exact",
    )


# ---------------------------------------------------------------------------
# metric invariances
# ---------------------------------------------------------------------------


def _random_trajectory(rng: np.random.Generator, n: int) -> Trajectory:
    frames = []
    for f in range(n):
        r = so3_exp(rng.normal(0.0, 0.6, 3))
        c = rng.uniform(-3.0, 3.0, 3)
        frames.append((f, Pose.from_rt(r, -r @ c)))
    return Trajectory(frames=frames, fps=12.0)


def _apply_similarity(traj: Trajectory, sim: Similarity) -> Trajectory:
    frames = []
    for f, p in traj.frames:
        r_new = p.rotation @ sim.rotation.T
        c_new = sim.apply(p.center[None, :])[0]
        frames.append((f, Pose.from_rt(r_new, -r_new @ c_new)))
    return Trajectory(frames=frames, fps=traj.fps)


def _jacobian_fd_dev(rng: np.random.Generator, n: int = 100, eps: float = 1e-6) -> float:
    """Max relative deviation of the analytic reprojection Jacobians from
    central finite differences over ``n`` random camera/point states."""
    rmats = np.stack([so3_exp(rng.normal(0.0, 1.0, 3)) for _ in range(n)])
    tvecs = np.column_stack(
        [rng.uniform(-0.5, 0.5, n), rng.uniform(-0.5, 0.5, n), rng.uniform(3.0, 6.0, n)]
    )
    points = rng.uniform(-1.0, 1.0, (n, 3))
    idx = np.arange(n)
    obs = rng.uniform(0.0, 640.0, (n, 2))
    fx, fy, cx, cy = 600.0, 620.0, 320.0, 240.0

    def residuals(rm, tv, pts, fxl, fyl):
        return reproj_residual_jacobian(rm, tv, pts, idx, idx, obs, fxl, fyl, cx, cy, True)[0]

    _, j_pose, j_point, j_focal, _ = reproj_residual_jacobian(
        rmats, tvecs, points, idx, idx, obs, fx, fy, cx, cy, True
    )
    worst = 0.0

    def check(fd, ana):
        nonlocal worst
        worst = max(worst, float((np.abs(fd - ana) / (1.0 + np.abs(ana))).max()))

    for axis in range(3):
        step = so3_exp(eps * np.eye(3)[axis])
        back = so3_exp(-eps * np.eye(3)[axis])
        fd = (
            residuals(np.einsum("ab,nbc->nac", step, rmats), tvecs, points, fx, fy)
            - residuals(np.einsum("ab,nbc->nac", back, rmats), tvecs, points, fx, fy)
        ) / (2.0 * eps)
        check(fd, j_pose[:, :, axis])
    for axis in range(3):
        delta = eps * np.eye(3)[axis]
        fd = (
            residuals(rmats, tvecs + delta, points, fx, fy)
            - residuals(rmats, tvecs - delta, points, fx, fy)
        ) / (2.0 * eps)
        check(fd, j_pose[:, :, 3 + axis])
    for axis in range(3):
        delta = eps * np.eye(3)[axis]
        fd = (
            residuals(rmats, tvecs, points + delta, fx, fy)
            - residuals(rmats, tvecs, points - delta, fx, fy)
        ) / (2.0 * eps)
        check(fd, j_point[:, :, axis])
    fd = (
        residuals(rmats, tvecs, points, fx * (1 + eps), fy * (1 + eps))
        - residuals(rmats, tvecs, points, fx * (1 - eps), fy * (1 - eps))
    ) / (2.0 * eps)
    check(fd, j_focal)
    return worst


def _arc_ba_problem(rng: np.random.Generator, n_cams: int = 4, n_pts: int = 25) -> SceneModel:
    def look_at(center):
        z = -center / np.linalg.norm(center)
        x = np.cross(np.array([0.0, 1.0, 0.0]), z)
        x = x / np.linalg.norm(x)
        y = np.cross(z, x)
        r = np.stack([x, y, z])
        return Pose.from_rt(r, -r @ center)

    thetas = np.linspace(-0.4, 0.4, n_cams)
    gt_poses = [
        look_at(np.array([3.0 * np.sin(t), 0.3 * np.sin(2 * t) + 0.1, -3.0 * np.cos(t)]))
        for t in thetas
    ]
    points = rng.uniform(-1.0, 1.0, (n_pts, 3))
    rot_scale = float(rng.uniform(0.005, 0.02))
    t_scale = float(rng.uniform(0.01, 0.05))
    pt_scale = float(rng.uniform(0.02, 0.08))
    landmarks = []
    for pid in range(n_pts):
        obs = [
            (f, K_VGA.project(pose.transform(points[pid][None]))[0])
            for f, pose in enumerate(gt_poses)
        ]
        landmarks.append(
            Landmark(
                id=pid, position=points[pid] + rng.normal(0.0, pt_scale, 3), observations=obs
            )
        )
    frames: list[tuple[int, Pose | None]] = [(0, gt_poses[0])]
    for f, pose in enumerate(gt_poses[1:], start=1):
        r = so3_exp(rng.normal(0.0, rot_scale, 3)) @ pose.rotation
        frames.append((f, Pose.from_rt(r, pose.t + rng.normal(0.0, t_scale, 3))))
    return SceneModel(
        trajectory=Trajectory(frames=frames, fps=12.0), landmarks=landmarks, intrinsics=K_VGA
    )


def test_metric_invariances_hold() -> None:
    rng = np.random.default_rng(17)
    base = _random_trajectory(rng, 40)
    pred = _apply_similarity(base, Similarity(scale=1.0, rotation=np.eye(3), translation=np.zeros(3)))
    # make the prediction imperfect so the invariance is not trivially 0 == 0
    jittered = []
    for f, p in pred.frames:
        jittered.append((f, Pose(p.quat, p.t + rng.normal(0.0, 0.05, 3))))
    pred = Trajectory(frames=jittered, fps=12.0)
    ref_ate = ate(base, pred)
    ate_dev = 0.0
    for _ in range(5):
        sim = Similarity(
            scale=float(rng.uniform(0.5, 2.0)),
            rotation=so3_exp(rng.normal(0.0, 1.0, 3)),
            translation=rng.uniform(-4.0, 4.0, 3),
        )
        ate_dev = max(ate_dev, abs(ate(base, _apply_similarity(pred, sim)) - ref_ate))

    rigid = Similarity(scale=1.0, rotation=so3_exp(rng.normal(0.0, 1.0, 3)), translation=rng.uniform(-2.0, 2.0, 3))
    ref_t, ref_r = rpe(base, pred, align=False)
    rot_t, rot_r = rpe(base, _apply_similarity(pred, rigid), align=False)
    rpe_dev = max(abs(rot_t - ref_t), abs(rot_r - ref_r))

    jac_dev = _jacobian_fd_dev(rng)

    monotone = True
    accepted_steps = 0
    for seed in range(50):
        model = _arc_ba_problem(np.random.default_rng(seed))
        hist = np.asarray(bundle_adjust(model).ba_cost_history)
        accepted_steps += len(hist) - 1
        monotone = monotone and bool(np.all(np.diff(hist) <= 1e-9 * max(1.0, hist[0])))

    ok = ate_dev <= 1e-9 and rpe_dev <= 1e-9 and jac_dev <= 1e-5 and monotone
    _report(
        "metric invariances",
        ok,
        f"ATE similarity dev {ate_dev:.1e} <= 1e-9; RPE global-rotation dev {rpe_dev:.1e} <= 1e-9; "
        f"BA jacobian vs finite differences {jac_dev:.1e} <= 1e-5; "
        f"BA cost non-increasing on 50/50 problems ({accepted_steps} accepted steps): {monotone}",
    )


# ---------------------------------------------------------------------------
# filter scoring vs a hand-coded reference
# ---------------------------------------------------------------------------

_SLOPE = 50.0


def _ref_logistic(x: float) -> float:
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _ref_gate(value: float, threshold: float, bigger_is_better: bool) -> float:
    if threshold <= 0.0:
        ok = value >= threshold if bigger_is_better else value <= threshold
        return 1.0 if ok else 0.0
    margin = (value - threshold) / threshold
    if not bigger_is_better:
        margin = -margin
    return _ref_logistic(_SLOPE * margin)


def _ref_percentile(values: list[float], q: float) -> float:
    s = sorted(values)
    pos = (q / 100.0) * (len(s) - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (pos - lo) * (s[hi] - s[lo])


def _ref_windows(values: list[float], fps: float) -> list[list[float]]:
    wlen = max(2, int(round(fps * 1.0)))
    if len(values) <= wlen:
        return [values]
    return [values[i : i + wlen] for i in range(len(values) - wlen + 1)]


def _ref_scores(sig: FilterSignals) -> dict[str, float]:
    fps = sig.signal_fps
    focal = [float(v) for v in sig.focal_seq]
    flow = [float(v) for v in sig.flow_seq]
    loss = [float(v) for v in sig.track_loss_seq]
    mask = [float(v) for v in sig.mask_fraction_seq]

    classifier = (
        _ref_gate(sig.classifier_acceptable, 0.55, True)
        + _ref_gate(sig.classifier_interaction, 0.20, True)
    ) / 2.0
    distortion = _ref_gate(sig.distortion_alpha, 1.00, False)

    spread = _ref_percentile(focal, 90) - _ref_percentile(focal, 10)
    worst_change = max((max(w) - min(w)) / min(w) for w in _ref_windows(focal, fps))
    focal_score = (
        _ref_gate(spread, 0.40 * (math.fsum(focal) / len(focal)), False)
        + _ref_gate(worst_change, 0.20, False)
        + _ref_gate(_ref_percentile(focal, 80), 1400.0, False)
    ) / 3.0

    masking = _ref_gate(_ref_percentile(mask, 90), 0.80, False)

    mean = math.fsum(flow) / len(flow)
    sigma = math.sqrt(math.fsum((v - mean) ** 2 for v in flow) / len(flow))
    if sigma <= 1e-12 * max(mean, 1e-12):
        spike = _ref_logistic(_SLOPE * 1.0)
    else:
        spike = _ref_gate(max(flow), mean + 4.0 * sigma, False)
    worst_window = max(math.fsum(w) / len(w) for w in _ref_windows(flow, fps))
    flow_score = (
        _ref_gate(mean, 0.02127, True) + spike + _ref_gate(worst_window, 0.15, False)
    ) / 3.0

    windowed = sig.track_median_move if sig.track_windowed_move is None else sig.track_windowed_move
    tracking = (
        _ref_gate(max(loss), 0.50, False)
        + _ref_gate(sig.track_median_move, 0.05, True)
        + _ref_gate(windowed, 0.05, True)
    ) / 3.0

    vlm = 0.0 if any(sig.vlm_answers) else 1.0
    return {
        "classifier": classifier,
        "distortion": distortion,
        "focal": focal_score,
        "masking": masking,
        "flow": flow_score,
        "tracking": tracking,
        "vlm": vlm,
    }


def test_filter_scores_match_reference_scorer() -> None:
    staged_cfg = CascadeConfig(stage_thresholds=(0.0,) * 5, final_threshold=0.910)
    worst = 0.0
    tp = fp = fn = 0
    staged_agree = True
    count = 0
    for kind in FIXTURE_KINDS:
        for seed in range(25):
            signals, label = make_filter_fixture(kind, seed)
            score = score_video(signals)
            ref = _ref_scores(signals)
            for name in COMPONENT_NAMES:
                worst = max(worst, abs(getattr(score, name) - ref[name]))
            include = score.aggregate >= 0.910
            tp += include and label
            fp += include and not label
            fn += label and not include
            staged_agree = staged_agree and cascade(signals, staged_cfg).included == include
            count += 1
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    ok = worst <= 1e-12 and precision == 1.0 and recall == 1.0 and staged_agree
    _report(
        "filter scoring oracle",
        ok,
        f"{count} fixtures: max component dev {worst:.1e} <= 1e-12; "
        f"precision {precision:.2f} recall {recall:.2f} at 0.910; "
        f"zero-threshold cascade == one-shot: {staged_agree}",
    )


# ---------------------------------------------------------------------------
# average precision vs a double-loop oracle
# ---------------------------------------------------------------------------


def _ap_double_loop(scores: list[float], labels: list[bool]) -> float:
    total_pos = sum(labels)
    curve = []
    for t in sorted(set(scores), reverse=True):
        tp = sum(1 for s, l in zip(scores, labels) if s >= t and l)
        fp = sum(1 for s, l in zip(scores, labels) if s >= t and not l)
        curve.append((tp / total_pos, tp / (tp + fp)))
    ap = 0.0
    prev = 0.0
    for r in sorted({r for r, _ in curve}):
        ap += (r - prev) * max(p for rr, p in curve if rr >= r)
        prev = r
    return ap


def test_average_precision_matches_double_loop_oracle() -> None:
    rng = np.random.default_rng(23)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(3, 41))
        scores = [round(float(v), 2) for v in rng.uniform(0.0, 1.0, n)]  # ties likely
        labels = [bool(v) for v in rng.random(n) < 0.5]
        if not any(labels):
            labels[int(rng.integers(0, n))] = True
        got = average_precision(pr_curve(scores, labels))
        worst = max(worst, abs(got - _ap_double_loop(scores, labels)))
    worked = average_precision(pr_curve([0.9, 0.8, 0.7], [True, False, True]))
    worked_dev = abs(worked - 5.0 / 6.0)
    ok = worst <= 1e-12 and worked_dev <= 1e-12
    _report(
        "average precision oracle",
        ok,
        f"100 random score sets: max dev {worst:.1e} <= 1e-12; "
        f"worked example {worked:.6f} == 0.833333",
    )


# ---------------------------------------------------------------------------
# correspondence extraction vs brute-force enumeration
# ---------------------------------------------------------------------------


def _enumerate_pairs(
    tracklets: list[Tracklet], masks: dict[int, DynamicMask]
) -> dict[tuple[int, int], int]:
    counts: dict[tuple[int, int], int] = {}
    for tr in tracklets:
        usable = []
        for i in range(len(tr.points)):
            if not tr.visible[i]:
                continue
            frame = tr.start_frame + i
            mask = masks.get(frame)
            if mask is not None:
                h, w = mask.bitmap.shape
                x = int(np.rint(tr.points[i][0]))
                y = int(np.rint(tr.points[i][1]))
                if 0 <= x < w and 0 <= y < h and mask.bitmap[y, x]:
                    continue
            usable.append(frame)
        for a in range(len(usable)):
            for b in range(a + 1, len(usable)):
                key = (usable[a], usable[b])
                counts[key] = counts.get(key, 0) + 1
    return counts


def test_correspondence_pairs_match_enumeration() -> None:
    rng = np.random.default_rng(2024)
    agree = 0
    for _ in range(1000):
        tracklets = []
        for tid in range(int(rng.integers(1, 7))):
            length = int(rng.integers(2, 8))
            tracklets.append(
                Tracklet(
                    id=tid,
                    start_frame=int(rng.integers(0, 5)),
                    points=rng.uniform(-3.0, 35.0, (length, 2)),
                    visible=rng.random(length) < 0.8,
                )
            )
        masks = {
            f: DynamicMask(f, rng.random((24, 32)) < 0.3)
            for f in range(12)
            if rng.random() < 0.5
        }
        expected = _enumerate_pairs(tracklets, masks)
        got = extract_correspondences(tracklets, masks)
        if set(got.pairs) == set(expected) and all(
            len(got.pairs[key][0]) == n for key, n in expected.items()
        ):
            agree += 1

    quad = Tracklet(id=0, start_frame=0, points=np.full((4, 2), 11.0), visible=np.ones(4, bool))
    open_pairs = extract_correspondences([quad], {}).total_matches
    blocked = DynamicMask(2, np.ones((24, 32), dtype=bool))
    masked_pairs = extract_correspondences([quad], {2: blocked}).total_matches
    ok = agree == 1000 and open_pairs == 6 and masked_pairs == 3
    _report(
        "correspondence enumeration",
        ok,
        f"{agree}/1000 random configs match brute force; "
        f"4 visible frames -> {open_pairs} pairs, one frame masked -> {masked_pairs}",
    )


# ---------------------------------------------------------------------------
# registration threshold and trajectory fill rules
# ---------------------------------------------------------------------------


def _coverage_limited_run(visible_frames: int) -> SceneModel:
    scene = gen_scene(
        2, SynthConfig(n_static=40, n_dynamic=0, num_frames=10, trajectory_kind="orbit")
    )
    tracks = project_tracks(scene, build_flows=False)
    clipped = []
    for tr in tracks.tracklets:
        vis = tr.visible.copy()
        vis[visible_frames:] = False
        if vis.any():
            clipped.append(
                Tracklet(id=tr.id, start_frame=tr.start_frame, points=tr.points, visible=vis)
            )
    return run_pipeline(clipped, None, scene.intrinsics, seed=0, num_frames=10)


def test_registration_and_fill_rules() -> None:
    under = _coverage_limited_run(7)  # 7/10 frames coverable -> below the bar
    at_bar = _coverage_limited_run(8)  # exactly 80% must still count as registered
    threshold_ok = (
        under.failed
        and "registered fraction" in (under.failure_reason or "")
        and not at_bar.failed
        and at_bar.trajectory.registered_fraction == 0.8
    )

    pa, pb, pc = (Pose.from_rt(so3_exp(np.array([0.1 * i, 0.2, 0.0])), np.array([i, 0.0, 1.0])) for i in range(3))
    holey = Trajectory(
        frames=[(f, {0: pa, 4: pb, 9: pc}.get(f)) for f in range(12)], fps=12.0
    )
    filled = fill_trajectory(holey, 12)
    nearest = {1: pa, 2: pa, 3: pb, 5: pb, 6: pb, 7: pc, 8: pc, 10: pc, 11: pc}
    poses = dict(filled.frames)
    fill_ok = (
        all(poses[f] is src for f, src in nearest.items())
        and poses[0] is pa and poses[4] is pb and poses[9] is pc
    )

    empty = Trajectory(frames=[(f, None) for f in range(5)], fps=12.0)
    identity_ok = all(
        np.array_equal(p.quat, [0.0, 0.0, 0.0, 1.0]) and np.array_equal(p.t, np.zeros(3))
        for _, p in fill_trajectory(empty, 5).frames
    )

    fill_a = random_fill(30, seed=7)
    fill_b = random_fill(30, seed=7)
    random_ok = all(
        np.array_equal(p.quat, [0.0, 0.0, 0.0, 1.0])
        and np.array_equal(p.t, q.t)
        and np.all(np.abs(p.t) <= 1.0)
        for (_, p), (_, q) in zip(fill_a.frames, fill_b.frames)
    )

    ok = threshold_ok and fill_ok and identity_ok and random_ok
    _report(
        "registration and fill rules",
        ok,
        f"70% coverage fails / 80% passes: {threshold_ok}; nearest-neighbor fill with "
        f"earlier-frame ties: {fill_ok}; identity fill: {identity_ok}; "
        f"seeded random fill deterministic in [-1,1]: {random_ok}",
    )


# ---------------------------------------------------------------------------
# file format round trips
# ---------------------------------------------------------------------------


def test_file_formats_round_trip(tmp_path) -> None:
    rng = np.random.default_rng(99)
    checks: list[bool] = []

    traj = Trajectory(
        frames=[
            (f, None if f in (2, 5) else Pose.from_rt(so3_exp(rng.normal(0.0, 1.0, 3)), rng.normal(0.0, 2.0, 3)))
            for f in range(9)
        ],
        fps=23.976,
    )
    tpath = tmp_path / "trajectory.txt"
    pipeline_io.write_trajectory(tpath, traj)
    back = pipeline_io.read_trajectory(tpath)
    pipeline_io.write_trajectory(tmp_path / "again.txt", traj)
    checks.append(tpath.read_bytes() == (tmp_path / "again.txt").read_bytes())
    checks.append(
        back.fps == traj.fps
        and all(
            (p is None) == (q is None)
            and (
                p is None
                or (
                    np.allclose(p.t, q.t, atol=1e-7)
                    and np.allclose(p.rotation, q.rotation, atol=1e-7)
                )
            )
            for (_, p), (_, q) in zip(traj.frames, back.frames)
        )
    )

    tracklets = [
        Tracklet(id=i, start_frame=int(rng.integers(0, 4)),
                 points=rng.normal(100.0, 30.0, (5, 2)), visible=rng.random(5) < 0.8)
        for i in range(6)
    ]
    pipeline_io.write_tracklets(tmp_path / "tracklets.jsonl", tracklets)
    back_tr = pipeline_io.read_tracklets(tmp_path / "tracklets.jsonl")
    checks.append(
        all(
            a.id == b.id and a.start_frame == b.start_frame
            and np.array_equal(a.points, b.points) and np.array_equal(a.visible, b.visible)
            for a, b in zip(tracklets, back_tr)
        )
    )

    mask = DynamicMask(3, rng.random((17, 23)) < 0.4)
    pipeline_io.write_mask(tmp_path / "mask.pgm", mask)
    checks.append(
        np.array_equal(pipeline_io.read_mask(tmp_path / "mask.pgm", frame_index=3).bitmap, mask.bitmap)
    )

    labels = rng.integers(0, 40000, (11, 13)).astype(np.uint16)
    pipeline_io.write_labelmap(tmp_path / "labels.pgm", labels)
    checks.append(np.array_equal(pipeline_io.read_labelmap(tmp_path / "labels.pgm"), labels))

    flow = FlowField(frame_a=0, frame_b=1, uv=rng.normal(0.0, 3.0, (10, 14, 2)).astype(np.float32))
    pipeline_io.write_flow(tmp_path / "flow.dpfl", flow)
    checks.append(
        np.array_equal(pipeline_io.read_flow(tmp_path / "flow.dpfl", 0, 1).uv, flow.uv)
    )

    signals, _ = make_filter_fixture("good", seed=1)
    pipeline_io.write_signals(tmp_path / "signals.json", signals)
    back_sig = pipeline_io.read_signals(tmp_path / "signals.json")
    checks.append(
        back_sig.classifier_acceptable == signals.classifier_acceptable
        and np.array_equal(back_sig.focal_seq, signals.focal_seq)
        and np.array_equal(back_sig.flow_seq, signals.flow_seq)
        and back_sig.vlm_answers == signals.vlm_answers
    )

    pairs = [
        AnnotatedPair("vid", 0, 3, (float(a), float(b)), (float(c), float(d)))
        for a, b, c, d in rng.uniform(0.0, 720.0, (5, 4))
    ]
    pipeline_io.write_pairs(tmp_path / "pairs.jsonl", pairs)
    checks.append(pipeline_io.read_pairs(tmp_path / "pairs.jsonl") == pairs)

    positioned = []
    (tmp_path / "bad_flow.dpfl").write_bytes(b"DPFL" + (5).to_bytes(4, "little") + (4).to_bytes(4, "little") + b"\0" * 8)
    with pytest.raises(ParseError) as err:
        pipeline_io.read_flow(tmp_path / "bad_flow.dpfl", 0, 1)
    positioned.append(err.value.offset is not None)
    (tmp_path / "bad_traj.txt").write_text("# trajectory v1\n# fps 12\n# num_frames 2\n0 1 2 3\n")
    with pytest.raises(ParseError) as err:
        pipeline_io.read_trajectory(tmp_path / "bad_traj.txt")
    positioned.append(err.value.line == 4)
    (tmp_path / "bad_pairs.jsonl").write_text('{"video": "v", "frame_a": 0}\n')
    with pytest.raises(ParseError) as err:
        pipeline_io.read_pairs(tmp_path / "bad_pairs.jsonl")
    positioned.append(err.value.line == 1)

    ok = all(checks) and all(positioned)
    _report(
        "file format round trips",
        ok,
        f"{len(checks)} round-trip checks exact across 7 formats: {all(checks)}; "
        f"malformed inputs carry line/offset positions: {all(positioned)}",
    )
