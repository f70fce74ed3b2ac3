"""Sliding-window point tracklets, mask-aware correspondence extraction, and
track statistics feeding the filter scores.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DimensionMismatch, InvalidInput
from .masking import DynamicMask


@dataclass
class Tracklet:
    """One tracked point over a contiguous frame window."""

    id: int
    start_frame: int
    points: np.ndarray  # (L, 2) pixel positions, one per covered frame
    visible: np.ndarray  # (L,) bool

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        vis = np.asarray(self.visible, dtype=bool)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise DimensionMismatch(f"points must be (L, 2), got {pts.shape}")
        if vis.shape != (pts.shape[0],):
            raise DimensionMismatch("visible flags must parallel points")
        if pts.shape[0] < 1:
            raise InvalidInput("tracklet must cover at least one frame")
        self.points = pts
        self.visible = vis

    def __len__(self) -> int:
        return len(self.points)

    @property
    def end_frame(self) -> int:
        """Last covered frame (inclusive)."""
        return self.start_frame + len(self.points) - 1

    @property
    def frames(self) -> range:
        return range(self.start_frame, self.end_frame + 1)

    def visible_frames(self) -> list[int]:
        return [self.start_frame + i for i in np.flatnonzero(self.visible)]

    def point_at(self, frame: int) -> np.ndarray:
        if not self.start_frame <= frame <= self.end_frame:
            raise InvalidInput(f"frame {frame} outside tracklet span {self.start_frame}..{self.end_frame}")
        return self.points[frame - self.start_frame]


@dataclass(frozen=True)
class WindowSchedule:
    """Regular tracking windows covering a clip, last windows padded."""

    starts: tuple[int, ...]
    length: int
    stride: int
    paddings: tuple[int, ...]  # per-window count of padded (virtual) frames


def window_schedule(
    num_frames: int,
    fps: float = 12.0,
    stride_seconds: float = 5.0 / 12.0,
    length_seconds: float = 2.5,
) -> WindowSchedule:
    """Window starts every round(stride_s*fps) frames, each round(length_s*fps) long.

    Windows starting near the clip end run past it; their overshoot is
    recorded as padding (virtual frames that carry no tracklets).
    """
    if num_frames < 1:
        raise InvalidInput("num_frames must be >= 1")
    if fps <= 0 or stride_seconds <= 0 or length_seconds <= 0:
        raise InvalidInput("fps, stride and length must be positive")
    stride = max(1, int(round(stride_seconds * fps)))
    length = max(2, int(round(length_seconds * fps)))
    starts = tuple(range(0, num_frames, stride))
    paddings = tuple(max(0, s + length - num_frames) for s in starts)
    return WindowSchedule(starts=starts, length=length, stride=stride, paddings=paddings)


def seed_grid(rows: int, cols: int, frame_w: int, frame_h: int) -> np.ndarray:
    """(rows*cols, 2) seed points at uniform cell centers, row-major order."""
    if rows < 1 or cols < 1:
        raise InvalidInput("grid must have at least one row and column")
    xs = (np.arange(cols) + 0.5) * (frame_w / cols)
    ys = (np.arange(rows) + 0.5) * (frame_h / rows)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


@dataclass
class CorrespondenceSet:
    """Pixel matches grouped by frame pair (i, j), i < j, with source track ids."""

    pairs: dict[tuple[int, int], tuple[np.ndarray, np.ndarray, np.ndarray]] = field(default_factory=dict)
    # value: (pts_i (M,2), pts_j (M,2), tracklet_ids (M,))

    def items(self):
        return sorted(self.pairs.items())

    def get(self, i: int, j: int) -> tuple[np.ndarray, np.ndarray, np.ndarray] | None:
        return self.pairs.get((i, j))

    @property
    def num_pairs(self) -> int:
        return len(self.pairs)

    @property
    def total_matches(self) -> int:
        return sum(len(v[0]) for v in self.pairs.values())

    def frame_ids(self) -> list[int]:
        seen: set[int] = set()
        for i, j in self.pairs:
            seen.add(i)
            seen.add(j)
        return sorted(seen)

    def matches_as_array(self, i: int, j: int) -> np.ndarray:
        """(M, 4) array [x_i, y_i, x_j, y_j] for one frame pair."""
        entry = self.pairs.get((i, j))
        if entry is None:
            return np.zeros((0, 4))
        return np.hstack([entry[0], entry[1]])


def _masked_at(point: np.ndarray, mask: DynamicMask | None) -> bool:
    if mask is None:
        return False
    h, w = mask.bitmap.shape
    # nearest-pixel test; positions outside the frame count as unmasked
    x = int(np.rint(point[0]))
    y = int(np.rint(point[1]))
    if 0 <= x < w and 0 <= y < h:
        return bool(mask.bitmap[y, x])
    return False


def extract_correspondences(
    tracklets: Sequence[Tracklet],
    masks: Mapping[int, DynamicMask] | None = None,
    dedupe: bool = False,
    warn_missing_masks: bool = False,
) -> CorrespondenceSet:
    """All frame pairs of every tracklet, skipping frames where it is masked.

    For each tracklet, every unordered pair of frames where it is visible and
    its (nearest-pixel) position is outside the dynamic mask yields one match.
    Duplicate matches from overlapping windows are kept unless ``dedupe``;
    output ordering is deterministic by (frame pair, tracklet id).
    """
    masks = masks or {}
    missing_frames: set[int] = set()
    buckets: dict[tuple[int, int], list[tuple[float, float, float, float, int]]] = {}
    for tr in sorted(tracklets, key=lambda t: t.id):
        usable: list[tuple[int, np.ndarray]] = []
        for i in np.flatnonzero(tr.visible):
            frame = tr.start_frame + int(i)
            if frame not in masks:
                missing_frames.add(frame)
            if not _masked_at(tr.points[i], masks.get(frame)):
                usable.append((frame, tr.points[i]))
        for a in range(len(usable)):
            fa, pa = usable[a]
            for b in range(a + 1, len(usable)):
                fb, pb = usable[b]
                buckets.setdefault((fa, fb), []).append(
                    (float(pa[0]), float(pa[1]), float(pb[0]), float(pb[1]), tr.id)
                )
    if warn_missing_masks and missing_frames:
        warnings.warn(f"no mask for frames {sorted(missing_frames)[:8]}...; treated as empty")
    out = CorrespondenceSet()
    for key in sorted(buckets):
        rows = buckets[key]
        if dedupe:
            seen: set[tuple[float, float, float, float]] = set()
            kept = []
            for row in rows:
                endpoint = row[:4]
                if endpoint not in seen:
                    seen.add(endpoint)
                    kept.append(row)
            rows = kept
        arr = np.array(rows, dtype=np.float64)
        out.pairs[key] = (
            np.ascontiguousarray(arr[:, 0:2]),
            np.ascontiguousarray(arr[:, 2:4]),
            arr[:, 4].astype(np.int64),
        )
    return out


@dataclass(frozen=True)
class TrackStatistics:
    loss_seq: np.ndarray  # loss fraction per frame; entry k = tracks that vanished at frame k
    median_move: float  # median per-track net displacement / frame diagonal
    windowed_median_move: float  # max over 1-s windows of per-window median displacement


def track_statistics(
    tracklets: Sequence[Tracklet],
    frame_diag_px: float,
    fps: float = 12.0,
    window_seconds: float = 1.0,
) -> TrackStatistics:
    """Per-frame loss fractions and median movement statistics.

    loss_seq[k] = (tracks visible at k-1 but not at k) / (tracks visible at
    k-1), 0 when nothing was visible; index 0 is always 0. Movement medians
    are taken over tracklets with >= 2 visible frames (single-frame tracks
    carry no displacement evidence); displacement = first-to-last visible
    position distance as a fraction of the frame diagonal.
    """
    if frame_diag_px <= 0:
        raise InvalidInput("frame diagonal must be positive")
    if not tracklets:
        raise InvalidInput("need at least one tracklet")
    last_frame = max(tr.end_frame for tr in tracklets)
    visible_count = np.zeros(last_frame + 1, dtype=np.int64)
    lost_count = np.zeros(last_frame + 1, dtype=np.int64)
    moves: list[float] = []
    window_len = max(2, int(round(fps * window_seconds)))
    windowed: dict[int, list[float]] = {}
    for tr in tracklets:
        vis_idx = np.flatnonzero(tr.visible)
        frames = tr.start_frame + vis_idx
        visible_count[frames] += 1
        for i, f in zip(vis_idx, frames):
            nxt = i + 1
            if f + 1 <= tr.end_frame and nxt < len(tr.visible) and not tr.visible[nxt]:
                lost_count[f + 1] += 1
            elif f == tr.end_frame and f + 1 <= last_frame:
                lost_count[f + 1] += 1
        if len(vis_idx) >= 2:
            disp = float(np.linalg.norm(tr.points[vis_idx[-1]] - tr.points[vis_idx[0]]))
            moves.append(disp / frame_diag_px)
            for wstart in range(tr.start_frame, tr.end_frame + 1):
                in_win = vis_idx[(frames >= wstart) & (frames < wstart + window_len)]
                if len(in_win) >= 2:
                    d = float(np.linalg.norm(tr.points[in_win[-1]] - tr.points[in_win[0]]))
                    windowed.setdefault(wstart, []).append(d / frame_diag_px)
    loss_seq = np.zeros(last_frame + 1, dtype=np.float64)
    for k in range(1, last_frame + 1):
        prev = visible_count[k - 1]
        if prev > 0:
            loss_seq[k] = lost_count[k] / prev
    median_move = float(np.median(moves)) if moves else 0.0
    windowed_median = max((float(np.median(v)) for v in windowed.values()), default=0.0)
    return TrackStatistics(loss_seq=loss_seq, median_move=median_move, windowed_median_move=windowed_median)
