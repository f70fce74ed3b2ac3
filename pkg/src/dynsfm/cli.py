"""Command-line surface: filter, mask, correspond, sfm, eval-traj,
eval-sampson, synth, pr-curve.

Exit codes: 0 success, 2 input error (unreadable/malformed files, bad
arguments), 3 pipeline failure (no consensus, failed registration, ...).
"""

from __future__ import annotations

import functools
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import evalmetrics, filtering, masking, pipeline_io, sfm, synthbench, tracking
from .errors import DynsfmError, InvalidInput, ParseError
from .geometry import Intrinsics

_INPUT_ERRORS = (ParseError, InvalidInput, FileNotFoundError, NotADirectoryError, PermissionError)

MASK_NAME = "mask_{:06d}.pgm"
LABEL_NAME = "labels_{:06d}.pgm"
FLOW_FWD_NAME = "flow_fwd_{:06d}.dpfl"
FLOW_BWD_NAME = "flow_bwd_{:06d}.dpfl"


def _cli_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _INPUT_ERRORS as exc:
            click.echo(f"input error: {exc}", err=True)
            sys.exit(2)
        except DynsfmError as exc:
            click.echo(f"pipeline failure: {type(exc).__name__}: {exc}", err=True)
            sys.exit(3)

    return wrapper


def _load_config(path: str | None) -> pipeline_io.PipelineConfig:
    if path is None:
        return pipeline_io.PipelineConfig()
    return pipeline_io.read_config(path)


def _parse_intrinsics(spec: str) -> Intrinsics:
    parts = spec.split(",")
    if len(parts) != 6:
        raise InvalidInput("intrinsics must be fx,fy,cx,cy,width,height")
    try:
        fx, fy, cx, cy = (float(v) for v in parts[:4])
        w, h = (int(v) for v in parts[4:])
    except ValueError as exc:
        raise InvalidInput(f"bad intrinsics: {exc}") from exc
    return Intrinsics(fx=fx, fy=fy, cx=cx, cy=cy, width=w, height=h)


def _out_dir(out: str) -> Path:
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _numbered(directory: Path, pattern: str) -> dict[int, Path]:
    """Map frame index -> path for files matching a {:06d} pattern."""
    rx = re.compile("^" + pattern.replace("{:06d}", r"(\d{6})") + "$")
    out = {}
    for p in sorted(directory.iterdir()):
        m = rx.match(p.name)
        if m:
            out[int(m.group(1))] = p
    return out


def _read_masks_dir(directory: str | Path) -> dict[int, masking.DynamicMask]:
    directory = Path(directory)
    if not directory.is_dir():
        raise NotADirectoryError(f"mask directory not found: {directory}")
    return {
        f: pipeline_io.read_mask(p, frame_index=f)
        for f, p in _numbered(directory, MASK_NAME).items()
    }


@click.group()
def main() -> None:
    """Video-curation toolkit: signal filtering, dynamic masking, global SfM
    and trajectory/correspondence evaluation."""


# ---------------------------------------------------------------------------
# filter
# ---------------------------------------------------------------------------

@main.command("filter")
@click.argument("signals_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, help="Output directory.")
@click.option("--config", "config_path", default=None, help="Pipeline config JSON.")
@click.option("--labels", "labels_path", default=None, help="CSV video,label with ground truth for PR points.")
@click.option("--jobs", default=1, show_default=True, help="Parallel scoring workers.")
@_cli_errors
def cmd_filter(signals_dir: str, out: str, config_path: str | None, labels_path: str | None, jobs: int) -> None:
    """Score per-video signal JSONs and emit cascade decisions (CSV)."""
    cfg = _load_config(config_path)
    out_p = _out_dir(out)
    files = sorted(Path(signals_dir).glob("*.json"))
    if not files:
        raise InvalidInput(f"no *.json signal files in {signals_dir}")
    cascade_cfg = filtering.CascadeConfig()

    def score_one(path: Path):
        signals = pipeline_io.read_signals(path)
        full = filtering.score_video(signals, cfg.filtering)
        decision = filtering.cascade(signals, cascade_cfg, cfg.filtering)
        return path.stem, full, decision

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(score_one, files))
    else:
        results = [score_one(p) for p in files]

    header = ["video", "included", "excluded_at_stage", "aggregate"] + list(filtering.COMPONENT_NAMES)
    rows = []
    for video, full, d in sorted(results):
        rows.append(
            [video, int(d.included), "" if d.excluded_at_stage is None else d.excluded_at_stage,
             full.aggregate] + [getattr(full, c) for c in filtering.COMPONENT_NAMES]
        )
    pipeline_io.write_csv(out_p / "decisions.csv", header, rows)

    if labels_path is not None:
        _, label_rows = pipeline_io.read_csv(labels_path)
        labels = {r[0]: bool(int(r[1])) for r in label_rows}
        scored = [(full.aggregate, labels[v]) for v, full, _ in results if v in labels]
        if not scored:
            raise InvalidInput("labels CSV shares no video ids with the signals directory")
        points = filtering.pr_curve([s for s, _ in scored], [l for _, l in scored])
        ap = filtering.average_precision(points)
        pipeline_io.write_csv(
            out_p / "pr_points.csv",
            ["threshold", "precision", "recall"],
            [[p.threshold, p.precision, p.recall] for p in points],
        )
        click.echo(f"average precision: {ap:.6f}")
    click.echo(f"scored {len(results)} videos -> {out_p / 'decisions.csv'}")


# ---------------------------------------------------------------------------
# mask
# ---------------------------------------------------------------------------

@main.command("mask")
@click.argument("input_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, help="Output directory for mask PGMs.")
@click.option("--config", "config_path", default=None, help="Pipeline config JSON.")
@click.option("--seed", default=0, show_default=True, type=int, help="RANSAC seed.")
@_cli_errors
def cmd_mask(input_dir: str, out: str, config_path: str | None, seed: int) -> None:
    """Fuse motion segmentation (flows) and semantic label maps into masks.

    Reads flow_fwd_NNNNNN.dpfl / flow_bwd_NNNNNN.dpfl (displacements for
    frame N -> N+1 and back) and optional labels_NNNNNN.pgm from INPUT_DIR.
    Keyframe cadence and propagation horizon come from the config.
    """
    cfg = _load_config(config_path)
    mcfg = cfg.masking
    in_p = Path(input_dir)
    out_p = _out_dir(out)
    fwd = _numbered(in_p, FLOW_FWD_NAME)
    bwd = _numbered(in_p, FLOW_BWD_NAME)
    labels = _numbered(in_p, LABEL_NAME)
    if not fwd and not labels:
        raise InvalidInput(f"no flow or label-map files found in {input_dir}")
    frame_ids = sorted(set(fwd) | set(labels) | {f + 1 for f in fwd})
    num_frames = max(frame_ids) + 1 if frame_ids else 0
    parts: dict[int, list[masking.DynamicMask]] = {f: [] for f in range(num_frames)}

    for f in sorted(fwd):
        if f % mcfg.keyframe_stride != 0:
            continue
        if f not in bwd:
            raise InvalidInput(f"missing backward flow for keyframe {f}")
        flow_f = pipeline_io.read_flow(fwd[f], f, f + 1)
        flow_b = pipeline_io.read_flow(bwd[f], f + 1, f)
        seg = masking.motion_segment(flow_f, flow_b, seed=seed, config=mcfg)
        parts[f].append(seg)
        for prop in masking.hold_propagate(seg, mcfg.propagate_frames):
            if prop.frame_index < num_frames:
                parts[prop.frame_index].append(prop)

    for f in sorted(labels):
        lm = pipeline_io.read_labelmap(labels[f])
        parts[f].append(masking.semantic_class_filter(lm, frame_index=f))

    shape = None
    for f in range(num_frames):
        have = [m for m in parts[f] if m.bitmap.size]
        if have:
            shape = have[0].bitmap.shape
            break
    if shape is None:
        raise InvalidInput("no usable mask source found")
    written = 0
    for f in range(num_frames):
        have = parts[f]
        if have:
            mask = masking.union_masks(have)
        else:
            mask = masking.DynamicMask.empty(f, shape[0], shape[1])
        pipeline_io.write_mask(out_p / MASK_NAME.format(f), mask)
        written += 1
    click.echo(f"wrote {written} masks -> {out_p}")


# ---------------------------------------------------------------------------
# correspond
# ---------------------------------------------------------------------------

@main.command("correspond")
@click.argument("tracklets_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("mask_dir", required=False, type=click.Path(file_okay=False))
@click.option("--out", required=True, help="Output directory.")
@click.option("--dedupe", is_flag=True, help="Drop duplicate endpoint matches.")
@_cli_errors
def cmd_correspond(tracklets_path: str, mask_dir: str | None, out: str, dedupe: bool) -> None:
    """Extract mask-filtered pairwise correspondences from tracklets."""
    tracklets = pipeline_io.read_tracklets(tracklets_path)
    masks = _read_masks_dir(mask_dir) if mask_dir else None
    corr = tracking.extract_correspondences(tracklets, masks, dedupe=dedupe)
    out_p = _out_dir(out)
    pipeline_io.write_correspondences(out_p / "correspondences.jsonl", corr)
    click.echo(
        f"{corr.num_pairs} frame pairs, {corr.total_matches} matches -> "
        f"{out_p / 'correspondences.jsonl'}"
    )


# ---------------------------------------------------------------------------
# sfm
# ---------------------------------------------------------------------------

@main.command("sfm")
@click.argument("tracklets_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("mask_dir", required=False, type=click.Path(file_okay=False))
@click.option("--out", required=True, help="Output directory.")
@click.option("--config", "config_path", default=None, help="Pipeline config JSON.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option(
    "--intrinsics",
    default="600,600,320,240,640,480",
    show_default=True,
    help="fx,fy,cx,cy,width,height",
)
@_cli_errors
def cmd_sfm(
    tracklets_path: str, mask_dir: str | None, out: str,
    config_path: str | None, seed: int, intrinsics: str,
) -> None:
    """Recover a camera trajectory from tracklets (optionally mask-filtered)."""
    cfg = _load_config(config_path)
    k = _parse_intrinsics(intrinsics)
    tracklets = pipeline_io.read_tracklets(tracklets_path)
    masks = _read_masks_dir(mask_dir) if mask_dir else None
    model = sfm.run_pipeline(tracklets, masks, k, config=cfg.sfm, seed=seed, fps=cfg.fps)
    out_p = _out_dir(out)
    pipeline_io.write_trajectory(out_p / "trajectory.txt", model.trajectory)
    pipeline_io.write_csv(
        out_p / "report.csv",
        ["status", "failure_reason", "mean_reprojection_error", "registered_fraction",
         "num_landmarks", "ba_accepted_steps"],
        [[model.status, model.failure_reason or "", model.mean_reprojection_error,
          model.trajectory.registered_fraction, len(model.landmarks),
          max(0, len(model.ba_cost_history) - 1)]],
    )
    click.echo(
        f"status {model.status}: registered {model.trajectory.registered_fraction:.1%}, "
        f"mean reprojection {model.mean_reprojection_error:.4g} px"
    )
    if model.failed:
        click.echo(f"pipeline failure: {model.failure_reason}", err=True)
        sys.exit(3)


# ---------------------------------------------------------------------------
# eval-traj
# ---------------------------------------------------------------------------

@main.command("eval-traj")
@click.argument("gt_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("pred_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, help="Output directory.")
@_cli_errors
def cmd_eval_traj(gt_path: str, pred_path: str, out: str) -> None:
    """ATE/RPE of a predicted trajectory against ground truth."""
    gt = pipeline_io.read_trajectory(gt_path)
    pred = pipeline_io.read_trajectory(pred_path)
    report = evalmetrics.evaluate_trajectory(gt, pred, total_frames=len(gt.frames))
    out_p = _out_dir(out)
    pipeline_io.write_csv(
        out_p / "eval_traj.csv",
        ["ate", "rpe_trans", "rpe_rot_deg", "registered_fraction"],
        [[report.ate, report.rpe_trans, report.rpe_rot, report.registered_fraction]],
    )
    click.echo(
        f"ATE {report.ate:.6g}  RPE-trans {report.rpe_trans:.6g}  "
        f"RPE-rot {report.rpe_rot:.6g} deg  registered {report.registered_fraction:.1%}"
    )


# ---------------------------------------------------------------------------
# eval-sampson
# ---------------------------------------------------------------------------

@main.command("eval-sampson")
@click.argument("traj_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("pairs_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, help="Output directory.")
@click.option("--config", "config_path", default=None, help="Pipeline config JSON.")
@click.option(
    "--intrinsics",
    default="600,600,320,240,640,480",
    show_default=True,
    help="fx,fy,cx,cy,width,height",
)
@click.option("--jobs", default=1, show_default=True, help="Parallel evaluation workers.")
@_cli_errors
def cmd_eval_sampson(
    traj_dir: str, pairs_path: str, out: str, config_path: str | None, intrinsics: str, jobs: int
) -> None:
    """Per-video square-root Sampson error of annotated pairs.

    TRAJ_DIR holds one <video>.txt trajectory per video id found in the
    annotated-pairs file.
    """
    cfg = _load_config(config_path)
    k = _parse_intrinsics(intrinsics)
    thresholds = tuple(cfg.eval_sampson_thresholds)
    pairs = pipeline_io.read_pairs(pairs_path)
    by_video: dict[str, list[evalmetrics.AnnotatedPair]] = {}
    for p in pairs:
        by_video.setdefault(p.video, []).append(p)
    if not by_video:
        raise InvalidInput("annotated-pairs file is empty")

    def eval_one(video: str):
        tpath = Path(traj_dir) / f"{video}.txt"
        if not tpath.exists():
            raise InvalidInput(f"no trajectory for video {video!r}: {tpath}")
        traj = pipeline_io.read_trajectory(tpath)
        filled = evalmetrics.fill_trajectory(traj, total_frames=len(traj.frames))
        return evalmetrics.sampson_eval(filled, k, by_video[video], thresholds)

    videos = sorted(by_video)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(eval_one, videos))
    else:
        reports = [eval_one(v) for v in videos]

    header = ["video", "num_pairs", "mean_error"] + [f"under_{t:g}px" for t in thresholds]
    rows = [
        [r.video, len(r.errors), r.mean_error] + [int(r.threshold_pass[t]) for t in thresholds]
        for r in reports
    ]
    acc = evalmetrics.sampson_accuracy(reports, thresholds)
    rows.append(["ALL", sum(len(r.errors) for r in reports),
                 float(np.mean([r.mean_error for r in reports]))] + [acc[t] for t in thresholds])
    out_p = _out_dir(out)
    pipeline_io.write_csv(out_p / "sampson.csv", header, rows)
    click.echo(
        "accuracy: " + "  ".join(f"<{t:g}px {acc[t]:.3f}" for t in thresholds)
    )


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

@main.command("synth")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--kind", required=True,
              type=click.Choice(synthbench.TRAJECTORY_KINDS + synthbench.FIXTURE_KINDS))
@click.option("--out", required=True, help="Output directory.")
@click.option("--noise", default=0.0, show_default=True, type=float, help="Tracklet pixel noise.")
@click.option("--frames", default=60, show_default=True, type=int)
@click.option("--windowed", is_flag=True, help="Split tracklets into sliding windows.")
@_cli_errors
def cmd_synth(seed: int, kind: str, out: str, noise: float, frames: int, windowed: bool) -> None:
    """Emit a synthetic scene (trajectory kinds) or filter fixture (signal kinds)."""
    out_p = _out_dir(out)
    if kind in synthbench.FIXTURE_KINDS:
        signals, label = synthbench.make_filter_fixture(kind, seed)
        pipeline_io.write_signals(out_p / "signals.json", signals)
        (out_p / "label.txt").write_text(("suitable" if label else "unsuitable") + "\n")
        click.echo(f"fixture {kind} seed {seed}: label {'suitable' if label else 'unsuitable'}")
        return
    cfg = synthbench.SynthConfig(trajectory_kind=kind, num_frames=frames)
    scene = synthbench.gen_scene(seed, cfg)
    schedule = None
    if windowed:
        schedule = tracking.window_schedule(frames, fps=cfg.fps)
    tracks = synthbench.project_tracks(scene, schedule=schedule, noise_px=noise, seed=seed)
    pipeline_io.write_trajectory(out_p / "gt_trajectory.txt", scene.gt_trajectory)
    pipeline_io.write_tracklets(out_p / "tracklets.jsonl", tracks.tracklets)
    mask_dir = out_p / "masks"
    mask_dir.mkdir(exist_ok=True)
    for f, m in sorted(tracks.masks.items()):
        pipeline_io.write_mask(mask_dir / MASK_NAME.format(f), m)
    flow_dir = out_p / "flows"
    flow_dir.mkdir(exist_ok=True)
    for fl in tracks.flows_fwd:
        pipeline_io.write_flow(flow_dir / FLOW_FWD_NAME.format(fl.frame_a), fl)
    for fl in tracks.flows_bwd:
        pipeline_io.write_flow(flow_dir / FLOW_BWD_NAME.format(fl.frame_b), fl)
    pairs = _sample_pairs(scene, tracks, seed)
    pipeline_io.write_pairs(out_p / "pairs.jsonl", pairs)
    click.echo(
        f"scene {kind} seed {seed}: {len(tracks.tracklets)} tracklets, "
        f"{len(tracks.masks)} masks, {len(tracks.flows_fwd)} flow pairs -> {out_p}"
    )


def _sample_pairs(scene, tracks, seed: int, count: int = 200) -> list:
    """Exact static correspondences in 720p coordinates for eval fixtures."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 99)))
    scale = 720.0 / scene.intrinsics.height
    max_gap = int(2.5 * scene.fps)
    static = [t for t in tracks.tracklets if t.id in tracks.static_track_ids]
    pairs = []
    budget = count * 20
    while len(pairs) < count and budget > 0 and static:
        budget -= 1
        tr = static[int(rng.integers(0, len(static)))]
        vis = np.flatnonzero(tr.visible)
        if len(vis) < 2:
            continue
        ia, ib = sorted(rng.choice(len(vis), size=2, replace=False))
        fa = tr.start_frame + int(vis[ia])
        fb = tr.start_frame + int(vis[ib])
        if fb - fa > max_gap or fa == fb:
            continue
        pa = tr.points[vis[ia]] * scale
        pb = tr.points[vis[ib]] * scale
        pairs.append(
            evalmetrics.AnnotatedPair(
                video="synth", frame_a=fa, frame_b=fb,
                point_a=(float(pa[0]), float(pa[1])),
                point_b=(float(pb[0]), float(pb[1])),
            )
        )
    return pairs


# ---------------------------------------------------------------------------
# pr-curve
# ---------------------------------------------------------------------------

@main.command("pr-curve")
@click.argument("scores_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, help="Output directory.")
@_cli_errors
def cmd_pr_curve(scores_path: str, out: str) -> None:
    """PR curve + AP from a CSV with columns video,score,label."""
    header, rows = pipeline_io.read_csv(scores_path)
    try:
        si = header.index("score")
        li = header.index("label")
    except ValueError as exc:
        raise InvalidInput("scores CSV must have 'score' and 'label' columns") from exc
    try:
        scores = [float(r[si]) for r in rows]
        labels = [bool(int(r[li])) for r in rows]
    except ValueError as exc:
        raise ParseError(f"bad score/label value: {exc}", path=scores_path) from exc
    points = filtering.pr_curve(scores, labels)
    ap = filtering.average_precision(points)
    out_p = _out_dir(out)
    pipeline_io.write_csv(
        out_p / "pr_curve.csv",
        ["threshold", "precision", "recall"],
        [[p.threshold, p.precision, p.recall] for p in points],
    )
    click.echo(f"average precision: {ap:.6f}")


if __name__ == "__main__":
    main()
