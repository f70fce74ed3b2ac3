"""Deterministic synthetic dynamic-scene generator.

Provides ground-truth camera trajectories, tracklets, dynamic masks, dense
flows and filter-signal fixtures. Flow fields are constructed so that the
displacement stored at each tracked point's rounded pixel is exactly that
point's projected displacement, which makes flow-chaining reproduce tracklet
motion to rounding error; points whose rounded pixels would collide are
excluded from tracking so every surviving tracklet owns its pixels.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidInput
from .filtering import FilterSignals
from .geometry import Intrinsics, Pose, Trajectory
from .masking import DynamicMask, FlowField
from .tracking import Tracklet, WindowSchedule

TRAJECTORY_KINDS = ("orbit", "forward_arc", "pan", "static", "linear")
FIXTURE_KINDS = (
    "good",
    "static_camera",
    "static_scene",
    "shot_change",
    "zoom_in",
    "long_focal",
    "huge_mask",
    "distorted",
)


@dataclass(frozen=True)
class SynthConfig:
    n_static: int = 120
    n_dynamic: int = 40
    trajectory_kind: str = "orbit"
    num_frames: int = 60
    fps: float = 12.0
    width: int = 640
    height: int = 480
    focal: float = 600.0
    orbit_radius: float = 5.0
    dynamic_amplitude: float = 0.35  # world units; default trips motion segmentation
    dynamic_period_s: float = 2.0
    dynamic_motion: str = "sinusoidal"  # or "linear"
    mask_dilation_px: int = 6
    min_visible_fraction: float = 0.6
    near_plane: float = 0.25

    def __post_init__(self):
        if self.trajectory_kind not in TRAJECTORY_KINDS:
            raise InvalidInput(
                f"trajectory_kind must be one of {TRAJECTORY_KINDS}, got {self.trajectory_kind!r}"
            )
        if self.dynamic_motion not in ("sinusoidal", "linear"):
            raise InvalidInput("dynamic_motion must be 'sinusoidal' or 'linear'")
        if self.num_frames < 2:
            raise InvalidInput("num_frames must be at least 2")


DEFAULT_SYNTH_CONFIG = SynthConfig()


@dataclass
class SynthScene:
    seed: int
    config: SynthConfig
    static_points: np.ndarray  # (S, 3) world
    dynamic_points: np.ndarray  # (D, F, 3) world, per-frame positions
    gt_trajectory: Trajectory
    intrinsics: Intrinsics
    orbit_center: np.ndarray | None = None  # set for orbit scenes

    @property
    def num_frames(self) -> int:
        return self.config.num_frames

    @property
    def fps(self) -> float:
        return self.config.fps


@dataclass
class SynthTracks:
    tracklets: list[Tracklet]
    masks: dict[int, DynamicMask]
    flows_fwd: list[FlowField]
    flows_bwd: list[FlowField]
    static_track_ids: set[int] = field(default_factory=set)
    dynamic_track_ids: set[int] = field(default_factory=set)


# ---------------------------------------------------------------------------
# camera paths
# ---------------------------------------------------------------------------

def _look_at(center: np.ndarray, target: np.ndarray) -> Pose:
    z = target - center
    nz = np.linalg.norm(z)
    if nz < 1e-12:
        raise InvalidInput("camera target coincides with camera center")
    z = z / nz
    up = np.array([0.0, 1.0, 0.0])
    x = np.cross(up, z)
    nx = np.linalg.norm(x)
    if nx < 1e-9:  # looking straight up/down
        x = np.cross(np.array([0.0, 0.0, 1.0]), z)
        nx = np.linalg.norm(x)
    x = x / nx
    y = np.cross(z, x)
    r = np.stack([x, y, z])
    return Pose.from_rt(r, -r @ center)


def _rot_y(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _camera_path(kind: str, f: int, rng: np.random.Generator, cfg: SynthConfig):
    """Per-frame (center, target) lists plus the orbit center when applicable."""
    u = np.linspace(0.0, 1.0, f)
    theta0 = float(rng.uniform(0.0, 2.0 * np.pi))
    ry = _rot_y(theta0)
    orbit_center = None
    if kind == "orbit":
        h = 1.2 + 0.4 * float(rng.uniform(-1.0, 1.0))
        r = cfg.orbit_radius
        ang = theta0 + u * np.deg2rad(300.0)
        centers = np.stack([r * np.sin(ang), np.full(f, h), r * np.cos(ang)], axis=1)
        targets = np.zeros((f, 3))
        orbit_center = np.array([0.0, h, 0.0])
    elif kind == "forward_arc":
        s = 5.0 * u
        curv = 0.06 + 0.04 * float(rng.uniform(0.0, 1.0))
        raw = np.stack([0.5 * curv * s * s, np.full(f, 0.3), -7.0 + s], axis=1)
        centers = raw @ ry.T
        targets = np.tile(ry @ np.array([0.0, 0.0, 0.0]), (f, 1))
    elif kind == "pan":
        raw = np.stack([-1.8 + 3.6 * u, np.full(f, 0.8), np.full(f, -5.5)], axis=1)
        targ = np.stack([-1.2 + 2.4 * u, np.zeros(f), np.zeros(f)], axis=1)
        centers = raw @ ry.T
        targets = targ @ ry.T
    elif kind == "static":
        raw = np.tile(np.array([0.0, 0.5, -5.5]), (f, 1))
        centers = raw @ ry.T
        targets = np.zeros((f, 3))
    elif kind == "linear":
        raw = np.stack([np.zeros(f), np.full(f, 0.4), -7.0 + 3.0 * u], axis=1)
        centers = raw @ ry.T
        targets = np.zeros((f, 3))
    else:  # pragma: no cover - guarded by SynthConfig
        raise InvalidInput(f"unknown trajectory kind {kind!r}")
    return centers, targets, orbit_center


# ---------------------------------------------------------------------------
# scene generation
# ---------------------------------------------------------------------------

def _project_paths(
    rmats: np.ndarray, tvecs: np.ndarray, paths: np.ndarray, k: Intrinsics, near: float
) -> tuple[np.ndarray, np.ndarray]:
    """Project per-frame world paths (P, F, 3) to (uv (P,F,2), visible (P,F))."""
    cam = np.einsum("fij,pfj->pfi", rmats, paths) + tvecs[None, :, :]
    z = cam[:, :, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = k.fx * cam[:, :, 0] / z + k.cx
        v = k.fy * cam[:, :, 1] / z + k.cy
    uv = np.stack([u, v], axis=-1)
    # the 0.5px inset keeps rounded pixel coordinates strictly in-frame
    vis = (
        (z > near)
        & (u >= 0.0)
        & (u < k.width - 0.5)
        & (v >= 0.0)
        & (v < k.height - 0.5)
    )
    return uv, vis


def gen_scene(seed: int, config: SynthConfig = DEFAULT_SYNTH_CONFIG) -> SynthScene:
    """Generate a deterministic scene: camera path, static and dynamic points.

    Every point (including each dynamic point along its whole path) is
    visible from at least ``min_visible_fraction`` of the frames.
    """
    cfg = config
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, TRAJECTORY_KINDS.index(cfg.trajectory_kind))))
    f = cfg.num_frames
    centers, targets, orbit_center = _camera_path(cfg.trajectory_kind, f, rng, cfg)
    poses = [_look_at(centers[t], targets[t]) for t in range(f)]
    rmats = np.stack([p.rotation for p in poses])
    tvecs = np.stack([p.t for p in poses])
    k = Intrinsics(
        fx=cfg.focal, fy=cfg.focal, cx=cfg.width / 2.0, cy=cfg.height / 2.0,
        width=cfg.width, height=cfg.height,
    )
    lo = np.array([-2.2, -1.2, -1.8])
    hi = np.array([2.2, 1.6, 1.8])
    need_vis = cfg.min_visible_fraction * f

    def select(candidate_paths: np.ndarray, want: int) -> np.ndarray:
        _, vis = _project_paths(rmats, tvecs, candidate_paths, k, cfg.near_plane)
        good = np.flatnonzero(vis.sum(axis=1) >= need_vis)
        return candidate_paths[good[:want]]

    static_points = np.zeros((0, 3))
    for _ in range(40):
        missing = cfg.n_static - len(static_points)
        if missing <= 0:
            break
        cand = rng.uniform(lo, hi, size=(max(8, 3 * missing), 3))
        picked = select(np.repeat(cand[:, None, :], f, axis=1), missing)
        if len(picked):
            static_points = np.concatenate([static_points, picked[:, 0, :]])
    if len(static_points) < cfg.n_static:
        raise InvalidInput(
            f"could not place {cfg.n_static} static points visible from "
            f"{cfg.min_visible_fraction:.0%} of frames"
        )

    omega = 2.0 * np.pi / (cfg.dynamic_period_s * cfg.fps)
    ts = np.arange(f)
    # one rigid motion shared by all dynamic points: a coherently moving
    # object is the case masks exist for — independently wiggling points are
    # epipolar outliers that robust estimation rejects on its own
    direction = rng.normal(size=3)
    direction[1] *= 0.4  # keep motion mostly lateral
    direction /= np.linalg.norm(direction)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    if cfg.dynamic_motion == "sinusoidal":
        offsets = cfg.dynamic_amplitude * np.sin(omega * ts + phase)
    else:
        step = 2.0 * cfg.dynamic_amplitude / max(f - 1, 1)
        offsets = step * ts - cfg.dynamic_amplitude
    path_offsets = offsets[:, None] * direction[None, :]  # (F,3)
    dynamic = np.zeros((0, f, 3))
    for _ in range(40):
        missing = cfg.n_dynamic - len(dynamic)
        if missing <= 0:
            break
        count = max(8, 3 * missing)
        base = rng.uniform(lo * 0.85, hi * 0.85, size=(count, 3))
        paths = base[:, None, :] + path_offsets[None, :, :]
        picked = select(paths, missing)
        if len(picked):
            dynamic = np.concatenate([dynamic, picked])
    if len(dynamic) < cfg.n_dynamic:
        raise InvalidInput(
            f"could not place {cfg.n_dynamic} dynamic points visible from "
            f"{cfg.min_visible_fraction:.0%} of frames"
        )

    return SynthScene(
        seed=seed,
        config=cfg,
        static_points=static_points,
        dynamic_points=dynamic,
        gt_trajectory=Trajectory(frames=[(t, poses[t]) for t in range(f)], fps=cfg.fps),
        intrinsics=k,
        orbit_center=orbit_center,
    )


# ---------------------------------------------------------------------------
# projection: tracklets, masks, flows
# ---------------------------------------------------------------------------

def _disk_offsets(radius: int) -> np.ndarray:
    ys, xs = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    keep = ys * ys + xs * xs <= radius * radius
    return np.stack([xs[keep], ys[keep]], axis=1)  # (M, 2) as (dx, dy)


def _stamp_disk(grid: np.ndarray, cx: int, cy: int, offsets: np.ndarray, value) -> None:
    xs = offsets[:, 0] + cx
    ys = offsets[:, 1] + cy
    h, w = grid.shape[:2]
    ok = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
    grid[ys[ok], xs[ok]] = value


def project_tracks(
    scene: SynthScene,
    schedule: WindowSchedule | None = None,
    noise_px: float = 0.0,
    seed: int = 0,
    build_flows: bool = True,
) -> SynthTracks:
    """Project scene points into tracklets plus ground-truth masks and flows.

    With no schedule each point yields one full-length tracklet; with a
    schedule, one tracklet per window per point. Masks are dilated disks
    around every visible dynamic point. Gaussian pixel noise applies to
    tracklet observations only — masks and flows stay exact. Flow synthesis
    dominates runtime, so callers that only need tracklets and masks can pass
    ``build_flows=False`` (tracklet noise draws are unaffected).
    """
    cfg = scene.config
    f = cfg.num_frames
    k = scene.intrinsics
    poses = [p for _, p in scene.gt_trajectory.frames]
    rmats = np.stack([p.rotation for p in poses])
    tvecs = np.stack([p.t for p in poses])
    n_static = len(scene.static_points)
    n_dynamic = len(scene.dynamic_points)
    n_pts = n_static + n_dynamic

    paths = np.concatenate(
        [
            np.repeat(scene.static_points[:, None, :], f, axis=1)
            if n_static
            else np.zeros((0, f, 3)),
            scene.dynamic_points if n_dynamic else np.zeros((0, f, 3)),
        ]
    )
    uv, vis = _project_paths(rmats, tvecs, paths, k, cfg.near_plane)
    rp = np.rint(uv).astype(np.int64)  # rounded pixels

    # ownership: a tracked point must own its rounded pixel at every visible
    # frame (exact flow values are written there, after any disk stamping)
    radius = cfg.mask_dilation_px
    tracked = np.ones(n_pts, dtype=bool)
    claims: list[dict[tuple[int, int], int]] = [dict() for _ in range(f)]
    for p in range(n_pts):
        if not tracked[p]:
            continue
        cells = [
            (t, (int(rp[p, t, 0]), int(rp[p, t, 1]))) for t in range(f) if vis[p, t]
        ]
        if not cells or any(cell in claims[t] for t, cell in cells):
            tracked[p] = False
            continue
        for t, cell in cells:
            claims[t][cell] = p

    # masks: disks around every visible dynamic point (tracked or not)
    offsets = _disk_offsets(radius)
    masks: dict[int, DynamicMask] = {}
    for t in range(f):
        bm = np.zeros((k.height, k.width), dtype=bool)
        for d in range(n_dynamic):
            p = n_static + d
            if vis[p, t]:
                _stamp_disk(bm, int(rp[p, t, 0]), int(rp[p, t, 1]), offsets, True)
        masks[t] = DynamicMask(t, bm)

    # flows: affine background + dynamic disks + exact writes for tracked points
    xs, ys = np.meshgrid(np.arange(k.width, dtype=np.float64), np.arange(k.height, dtype=np.float64))

    def affine_background(src_t: int, dst_t: int) -> np.ndarray:
        rows = []
        disp = []
        for p in range(n_static):
            if vis[p, src_t] and vis[p, dst_t]:
                rows.append([uv[p, src_t, 0], uv[p, src_t, 1], 1.0])
                disp.append(uv[p, dst_t] - uv[p, src_t])
        field_uv = np.zeros((k.height, k.width, 2))
        if len(rows) >= 3:
            a = np.asarray(rows)
            b = np.asarray(disp)
            coef, *_ = np.linalg.lstsq(a, b, rcond=None)  # (3, 2)
            field_uv[:, :, 0] = coef[0, 0] * xs + coef[1, 0] * ys + coef[2, 0]
            field_uv[:, :, 1] = coef[0, 1] * xs + coef[1, 1] * ys + coef[2, 1]
        return field_uv

    def build_flow(src_t: int, dst_t: int) -> FlowField:
        field_uv = affine_background(src_t, dst_t)
        for d in range(n_dynamic):
            p = n_static + d
            if vis[p, src_t] and vis[p, dst_t]:
                _stamp_disk(
                    field_uv, int(rp[p, src_t, 0]), int(rp[p, src_t, 1]), offsets,
                    uv[p, dst_t] - uv[p, src_t],
                )
        for p in range(n_pts):
            if tracked[p] and vis[p, src_t] and vis[p, dst_t]:
                field_uv[int(rp[p, src_t, 1]), int(rp[p, src_t, 0])] = uv[p, dst_t] - uv[p, src_t]
        return FlowField(src_t, dst_t, field_uv)

    flows_fwd = [build_flow(t, t + 1) for t in range(f - 1)] if build_flows else []
    flows_bwd = [build_flow(t + 1, t) for t in range(f - 1)] if build_flows else []

    # tracklets (observation noise applied per point-frame)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(scene.seed, seed, 7)))
    noisy_uv = uv.copy()
    if noise_px > 0.0:
        noisy_uv += rng.normal(0.0, noise_px, size=uv.shape)
        noisy_uv[:, :, 0] = np.clip(noisy_uv[:, :, 0], 0.0, k.width - 1e-3)
        noisy_uv[:, :, 1] = np.clip(noisy_uv[:, :, 1], 0.0, k.height - 1e-3)

    tracklets: list[Tracklet] = []
    static_ids: set[int] = set()
    dynamic_ids: set[int] = set()

    def add_tracklet(tid: int, p: int, start: int, length: int) -> None:
        stop = min(start + length, f)
        if stop - start < 1:
            return
        vis_slice = vis[p, start:stop]
        if not vis_slice.any():
            return
        tracklets.append(
            Tracklet(
                id=tid,
                start_frame=start,
                points=noisy_uv[p, start:stop].copy(),
                visible=vis_slice.copy(),
            )
        )
        (static_ids if p < n_static else dynamic_ids).add(tid)

    if schedule is None:
        for p in range(n_pts):
            if tracked[p]:
                add_tracklet(p, p, 0, f)
    else:
        for w, start in enumerate(schedule.starts):
            for p in range(n_pts):
                if tracked[p]:
                    add_tracklet(w * n_pts + p, p, start, schedule.length)

    return SynthTracks(
        tracklets=tracklets,
        masks=masks,
        flows_fwd=flows_fwd,
        flows_bwd=flows_bwd,
        static_track_ids=static_ids,
        dynamic_track_ids=dynamic_ids,
    )


# ---------------------------------------------------------------------------
# filter fixtures
# ---------------------------------------------------------------------------

def _fixture_rng(kind: str, seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=(FIXTURE_KINDS.index(kind), seed)))


def make_filter_fixture(kind: str, seed: int = 0) -> tuple[FilterSignals, bool]:
    """Signals that trip exactly the intended sub-score, plus the true label.

    Margins sit far enough from every threshold that the logistic scores
    saturate; bad kinds co-trip the physically coherent companion indicators
    (e.g. a shot change spikes both flow and track loss) so the 7-way mean
    drops below the 0.910 acceptance line.
    """
    if kind not in FIXTURE_KINDS:
        raise InvalidInput(f"fixture kind must be one of {FIXTURE_KINDS}, got {kind!r}")
    rng = _fixture_rng(kind, seed)
    n = 51  # ~8.5 s of signals at 6 Hz
    fps = 6.0

    def jitter(center: float, width: float) -> float:
        return float(center + rng.uniform(-width, width))

    # healthy defaults (margins >= 0.75 of each threshold)
    acceptable = jitter(0.97, 0.02)
    interaction = jitter(0.55, 0.05)
    alpha = jitter(0.15, 0.05)
    focal = np.full(n, jitter(320.0, 8.0)) + rng.uniform(-1.5, 1.5, n)
    mask_frac = np.clip(rng.uniform(0.02, 0.05, n), 0.0, 1.0)
    flow = np.full(n, jitter(0.0374, 0.0002))
    loss = np.clip(rng.uniform(0.0, 0.04, n), 0.0, 1.0)
    median_move = jitter(0.30, 0.03)
    windowed_move = jitter(0.25, 0.03)
    vlm = [False] * 8
    label = kind == "good"

    if kind == "static_camera":
        # tripod: no flow, no track movement
        flow = np.full(n, jitter(0.005, 0.001))
        median_move = jitter(0.004, 0.001)
        windowed_move = jitter(0.003, 0.001)
    elif kind == "static_scene":
        # camera moves, nothing happens: no interaction, tracks barely move
        interaction = jitter(0.02, 0.01)
        median_move = jitter(0.006, 0.002)
        windowed_move = jitter(0.005, 0.002)
    elif kind == "shot_change":
        flow = np.full(n, jitter(0.03, 0.002))
        cut = int(rng.integers(10, n - 10))
        flow[cut] = jitter(0.90, 0.03)
        loss = np.clip(rng.uniform(0.0, 0.04, n), 0.0, 1.0)
        loss[cut] = jitter(0.85, 0.04)
    elif kind == "zoom_in":
        ramp_len = 18
        f0 = jitter(500.0, 10.0)
        f1 = jitter(1500.0, 20.0)
        focal = np.concatenate([np.linspace(f0, f1, ramp_len), np.full(n - ramp_len, f1)])
        loss = np.clip(rng.uniform(0.0, 0.04, n), 0.0, 1.0)
        loss[int(rng.integers(5, n - 5))] = jitter(0.62, 0.03)  # zoom breaks tracks
    elif kind == "long_focal":
        focal = np.full(n, jitter(1600.0, 20.0)) + rng.uniform(-1.5, 1.5, n)
        median_move = jitter(0.004, 0.001)  # long lens on a tripod
        windowed_move = jitter(0.003, 0.001)
    elif kind == "huge_mask":
        mask_frac = np.clip(rng.uniform(0.90, 0.95, n), 0.0, 1.0)
    elif kind == "distorted":
        alpha = jitter(1.45, 0.04)

    signals = FilterSignals(
        classifier_acceptable=acceptable,
        classifier_interaction=interaction,
        distortion_alpha=alpha,
        focal_seq=focal,
        mask_fraction_seq=mask_frac,
        flow_seq=flow,
        track_loss_seq=loss,
        track_median_move=median_move,
        track_windowed_move=windowed_move,
        vlm_answers=vlm,
        signal_fps=fps,
    )
    return signals, label
