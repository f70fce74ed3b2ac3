"""End-to-end command-line tests using Click's test runner."""

from __future__ import annotations

import shutil
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from dynsfm.cli import main
from dynsfm.pipeline_io import (
    read_csv,
    read_mask,
    read_signals,
    read_tracklets,
    read_trajectory,
    write_csv,
    write_labelmap,
    write_signals,
    write_tracklets,
)
from dynsfm.synthbench import make_filter_fixture
from dynsfm.tracking import Tracklet


@pytest.fixture(scope="module")
def runner() -> CliRunner:
    return CliRunner()


@pytest.fixture(scope="module")
def synth_dir(runner, tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("synth")
    result = runner.invoke(
        main, ["synth", "--kind", "orbit", "--seed", "3", "--frames", "10", "--out", str(out)]
    )
    assert result.exit_code == 0, result.output
    return out


def test_synth_scene_layout(synth_dir: Path) -> None:
    assert (synth_dir / "gt_trajectory.txt").exists()
    assert (synth_dir / "tracklets.jsonl").exists()
    assert (synth_dir / "pairs.jsonl").exists()
    assert len(list((synth_dir / "masks").glob("mask_*.pgm"))) == 10
    assert len(list((synth_dir / "flows").glob("flow_fwd_*.dpfl"))) == 9
    assert len(list((synth_dir / "flows").glob("flow_bwd_*.dpfl"))) == 9
    traj = read_trajectory(synth_dir / "gt_trajectory.txt")
    assert len(traj.frames) == 10 and traj.registered_fraction == 1.0


def test_synth_windowed_splits_tracklets(runner, tmp_path) -> None:
    result = runner.invoke(
        main,
        ["synth", "--kind", "orbit", "--seed", "3", "--frames", "10", "--windowed", "--out", str(tmp_path)],
    )
    assert result.exit_code == 0, result.output
    tracklets = read_tracklets(tmp_path / "tracklets.jsonl")
    assert {tr.start_frame for tr in tracklets} == {0, 5}


def test_synth_fixture_kind_writes_signals(runner, tmp_path) -> None:
    result = runner.invoke(
        main, ["synth", "--kind", "huge_mask", "--seed", "1", "--out", str(tmp_path)]
    )
    assert result.exit_code == 0, result.output
    assert "unsuitable" in result.output
    signals = read_signals(tmp_path / "signals.json")
    assert float(np.percentile(signals.mask_fraction_seq, 90)) > 0.8
    assert (tmp_path / "label.txt").read_text().strip() == "unsuitable"


def test_sfm_then_eval_traj_closes_the_loop(runner, synth_dir, tmp_path) -> None:
    sfm_out = tmp_path / "sfm"
    result = runner.invoke(
        main,
        ["sfm", str(synth_dir / "tracklets.jsonl"), str(synth_dir / "masks"), "--out", str(sfm_out)],
    )
    assert result.exit_code == 0, result.output
    assert "status ok" in result.output
    header, rows = read_csv(sfm_out / "report.csv")
    report = dict(zip(header, rows[0]))
    assert report["status"] == "ok"
    assert float(report["registered_fraction"]) == 1.0
    assert float(report["mean_reprojection_error"]) < 1e-6

    eval_out = tmp_path / "eval"
    result = runner.invoke(
        main,
        ["eval-traj", str(synth_dir / "gt_trajectory.txt"), str(sfm_out / "trajectory.txt"),
         "--out", str(eval_out)],
    )
    assert result.exit_code == 0, result.output
    header, rows = read_csv(eval_out / "eval_traj.csv")
    metrics = dict(zip(header, rows[0]))
    assert float(metrics["ate"]) < 1e-6
    assert float(metrics["registered_fraction"]) == 1.0


def test_eval_traj_identity(runner, synth_dir, tmp_path) -> None:
    gt = str(synth_dir / "gt_trajectory.txt")
    result = runner.invoke(main, ["eval-traj", gt, gt, "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    header, rows = read_csv(tmp_path / "eval_traj.csv")
    metrics = dict(zip(header, rows[0]))
    assert float(metrics["ate"]) == pytest.approx(0.0, abs=1e-12)
    assert float(metrics["rpe_trans"]) == pytest.approx(0.0, abs=1e-12)


def test_sfm_failure_exits_3_but_writes_report(runner, synth_dir, tmp_path) -> None:
    tracklets = read_tracklets(synth_dir / "tracklets.jsonl")
    halves: list[Tracklet] = []
    for tr in tracklets:
        pts = np.asarray(tr.points)
        vis = np.asarray(tr.visible)
        if vis[:5].any():
            halves.append(Tracklet(id=tr.id, start_frame=0, points=pts[:5], visible=vis[:5]))
        if vis[5:].any():
            halves.append(Tracklet(id=tr.id + 10_000, start_frame=5, points=pts[5:], visible=vis[5:]))
    split_path = tmp_path / "split.jsonl"
    write_tracklets(split_path, halves)
    out = tmp_path / "sfm"
    result = runner.invoke(main, ["sfm", str(split_path), "--out", str(out)])
    assert result.exit_code == 3
    assert (out / "trajectory.txt").exists()
    header, rows = read_csv(out / "report.csv")
    report = dict(zip(header, rows[0]))
    assert report["status"] == "failed"
    assert "registered fraction" in report["failure_reason"]


def test_sfm_malformed_tracklets_exits_2(runner, tmp_path) -> None:
    bad = tmp_path / "bad.jsonl"
    bad.write_text("this is not json\n")
    result = runner.invoke(main, ["sfm", str(bad), "--out", str(tmp_path / "out")])
    assert result.exit_code == 2


def test_sfm_bad_intrinsics_exits_2(runner, synth_dir, tmp_path) -> None:
    result = runner.invoke(
        main,
        ["sfm", str(synth_dir / "tracklets.jsonl"), "--out", str(tmp_path), "--intrinsics", "600,600"],
    )
    assert result.exit_code == 2


def test_filter_decisions_and_pr(runner, tmp_path) -> None:
    sig_dir = tmp_path / "signals"
    sig_dir.mkdir()
    cases = [("vid_good", "good", 1), ("vid_mask", "huge_mask", 0), ("vid_cut", "shot_change", 0)]
    for name, kind, _ in cases:
        signals, _ = make_filter_fixture(kind, seed=0)
        write_signals(sig_dir / f"{name}.json", signals)
    labels_path = tmp_path / "labels.csv"
    write_csv(labels_path, ["video", "label"], [[n, lab] for n, _, lab in cases])
    out = tmp_path / "out"
    result = runner.invoke(
        main, ["filter", str(sig_dir), "--out", str(out), "--labels", str(labels_path), "--jobs", "2"]
    )
    assert result.exit_code == 0, result.output
    assert "average precision:" in result.output
    header, rows = read_csv(out / "decisions.csv")
    assert header[:4] == ["video", "included", "excluded_at_stage", "aggregate"]
    decisions = {r[0]: r for r in rows}
    assert decisions["vid_good"][1] == "1"
    assert decisions["vid_mask"][1] == "0"
    assert decisions["vid_cut"][1] == "0"
    assert decisions["vid_good"][2] == ""  # included videos pass every stage
    assert float(decisions["vid_good"][3]) >= 0.910
    assert float(decisions["vid_mask"][3]) < 0.910
    assert float(decisions["vid_cut"][3]) < 0.910
    assert (out / "pr_points.csv").exists()


def test_filter_empty_dir_exits_2(runner, tmp_path) -> None:
    empty = tmp_path / "signals"
    empty.mkdir()
    result = runner.invoke(main, ["filter", str(empty), "--out", str(tmp_path / "out")])
    assert result.exit_code == 2


def test_mask_command_fuses_motion_and_semantics(runner, synth_dir, tmp_path) -> None:
    in_dir = tmp_path / "inputs"
    in_dir.mkdir()
    for p in (synth_dir / "flows").iterdir():
        shutil.copy(p, in_dir / p.name)
    labels = np.zeros((480, 640), dtype=np.uint16)
    labels[100:140, 200:260] = 1  # person class
    write_labelmap(in_dir / "labels_000003.pgm", labels)
    out = tmp_path / "masks"
    result = runner.invoke(main, ["mask", str(in_dir), "--out", str(out)])
    assert result.exit_code == 0, result.output
    written = sorted(out.glob("mask_*.pgm"))
    assert len(written) == 10
    semantic = read_mask(out / "mask_000003.pgm", frame_index=3)
    assert semantic.bitmap[100:140, 200:260].all()


def test_mask_missing_backward_flow_exits_2(runner, synth_dir, tmp_path) -> None:
    in_dir = tmp_path / "inputs"
    in_dir.mkdir()
    shutil.copy(synth_dir / "flows" / "flow_fwd_000000.dpfl", in_dir / "flow_fwd_000000.dpfl")
    result = runner.invoke(main, ["mask", str(in_dir), "--out", str(tmp_path / "out")])
    assert result.exit_code == 2


def test_correspond_writes_archive(runner, synth_dir, tmp_path) -> None:
    out = tmp_path / "corr"
    result = runner.invoke(
        main,
        ["correspond", str(synth_dir / "tracklets.jsonl"), str(synth_dir / "masks"), "--out", str(out)],
    )
    assert result.exit_code == 0, result.output
    assert (out / "correspondences.jsonl").exists()
    assert "frame pairs" in result.output


def test_eval_sampson_on_ground_truth(runner, synth_dir, tmp_path) -> None:
    traj_dir = tmp_path / "trajs"
    traj_dir.mkdir()
    shutil.copy(synth_dir / "gt_trajectory.txt", traj_dir / "synth.txt")
    out = tmp_path / "out"
    result = runner.invoke(
        main,
        ["eval-sampson", str(traj_dir), str(synth_dir / "pairs.jsonl"), "--out", str(out), "--jobs", "2"],
    )
    assert result.exit_code == 0, result.output
    header, rows = read_csv(out / "sampson.csv")
    assert header == ["video", "num_pairs", "mean_error", "under_5px", "under_10px", "under_30px"]
    by_video = {r[0]: r for r in rows}
    assert float(by_video["synth"][2]) < 1e-4  # exact geometry: ~0 error
    assert [by_video["synth"][i] for i in (3, 4, 5)] == ["1", "1", "1"]
    assert float(by_video["ALL"][3]) == 1.0


def test_eval_sampson_missing_video_exits_2(runner, synth_dir, tmp_path) -> None:
    empty = tmp_path / "trajs"
    empty.mkdir()
    result = runner.invoke(
        main, ["eval-sampson", str(empty), str(synth_dir / "pairs.jsonl"), "--out", str(tmp_path / "o")]
    )
    assert result.exit_code == 2


def test_pr_curve_command(runner, tmp_path) -> None:
    scores = tmp_path / "scores.csv"
    write_csv(scores, ["video", "score", "label"], [["a", 0.9, 1], ["b", 0.8, 0], ["c", 0.7, 1]])
    out = tmp_path / "out"
    result = runner.invoke(main, ["pr-curve", str(scores), "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert "average precision: 0.833333" in result.output
    header, rows = read_csv(out / "pr_curve.csv")
    assert header == ["threshold", "precision", "recall"]
    assert len(rows) == 3
    assert [r[0] for r in rows] == ["0.9", "0.8", "0.7"]


def test_pr_curve_requires_columns(runner, tmp_path) -> None:
    scores = tmp_path / "scores.csv"
    write_csv(scores, ["video", "value"], [["a", 0.9]])
    result = runner.invoke(main, ["pr-curve", str(scores), "--out", str(tmp_path / "o")])
    assert result.exit_code == 2
