"""Per-frame dynamic masks: semantic/interaction selection and flow-based
motion segmentation.

A pixel counts as dynamic when any source says so: semantic class membership,
held-object interaction, or epipolar-geometry violation of the dense flow.
Masks from a segmentation keyframe can be held forward a few frames to match
a keyframed cadence.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionMismatch, InvalidInput, NoConsensus, TooFewMatches
from .geometry import FundamentalMatrix, enforce_rank2

# semantic ids treated as movable content: person, vehicles, animals,
# accessories, sports gear, plush toys
DYNAMIC_CLASS_IDS = frozenset({1} | set(range(2, 10)) | set(range(16, 26)) | set(range(26, 34)) | set(range(34, 44)) | {88})

# contact states that imply an object is being held (vs. merely touched)
HELD_TOUCH_CLASSES = frozenset({1, 2, 4, 6})


@dataclass
class DynamicMask:
    """Boolean bitmap for one frame; True marks dynamic pixels."""

    frame_index: int
    bitmap: np.ndarray  # (H, W) bool

    def __post_init__(self):
        bm = np.asarray(self.bitmap)
        if bm.ndim != 2:
            raise DimensionMismatch(f"mask bitmap must be 2-D, got shape {bm.shape}")
        self.bitmap = bm.astype(bool)

    @property
    def area_fraction(self) -> float:
        return float(self.bitmap.mean()) if self.bitmap.size else 0.0

    @staticmethod
    def empty(frame_index: int, height: int, width: int) -> "DynamicMask":
        return DynamicMask(frame_index, np.zeros((height, width), dtype=bool))


@dataclass
class FlowField:
    """Dense displacement field from frame_a to frame_b, pixels, row-major."""

    frame_a: int
    frame_b: int
    uv: np.ndarray  # (H, W, 2) float

    def __post_init__(self):
        uv = np.asarray(self.uv, dtype=np.float64)
        if uv.ndim != 3 or uv.shape[2] != 2:
            raise DimensionMismatch(f"flow must be (H, W, 2), got {uv.shape}")
        self.uv = uv

    @property
    def shape(self) -> tuple[int, int]:
        return self.uv.shape[0], self.uv.shape[1]


@dataclass(frozen=True)
class MaskingConfig:
    ransac_threshold_px: float = 1.0
    ransac_max_iters: int = 2000
    ransac_confidence: float = 0.99
    ransac_min_inlier_ratio: float = 0.3
    grid_step: int = 8  # flow subsampling stride for the RANSAC fit
    error_area_divisor: float = 8100.0  # mask threshold = H*W / divisor
    keyframe_stride: int = 6
    propagate_frames: int = 6


DEFAULT_MASKING_CONFIG = MaskingConfig()


# ---------------------------------------------------------------------------
# robust fundamental-matrix estimation
# ---------------------------------------------------------------------------

def _hartley_normalize(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Translate to centroid and scale to rms distance sqrt(2); returns (pts', T)."""
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    rms = float(np.sqrt((centered ** 2).sum(axis=1).mean()))
    s = np.sqrt(2.0) / rms if rms > 1e-12 else 1.0
    t = np.array(
        [
            [s, 0.0, -s * centroid[0]],
            [0.0, s, -s * centroid[1]],
            [0.0, 0.0, 1.0],
        ]
    )
    return centered * s, t


def eight_point(pts1: np.ndarray, pts2: np.ndarray) -> np.ndarray:
    """Normalized 8-point fundamental matrix fit (un-normalized scale), rank-2 enforced."""
    pts1 = np.asarray(pts1, dtype=np.float64)
    pts2 = np.asarray(pts2, dtype=np.float64)
    if len(pts1) < 8:
        raise TooFewMatches(f"8-point needs >= 8 matches, got {len(pts1)}")
    n1, t1 = _hartley_normalize(pts1)
    n2, t2 = _hartley_normalize(pts2)
    x1, y1 = n1[:, 0], n1[:, 1]
    x2, y2 = n2[:, 0], n2[:, 1]
    a = np.stack(
        [x2 * x1, x2 * y1, x2, y2 * x1, y2 * y1, y2, x1, y1, np.ones_like(x1)], axis=1
    )
    _, _, vt = np.linalg.svd(a)
    f = vt[-1].reshape(3, 3)
    f = enforce_rank2(f)
    return t2.T @ f @ t1


@dataclass
class RansacResult:
    f: FundamentalMatrix
    inliers: np.ndarray  # (N,) bool
    num_iterations: int

    @property
    def inlier_ratio(self) -> float:
        return float(self.inliers.mean()) if len(self.inliers) else 0.0


def estimate_fundamental_ransac(
    matches: np.ndarray,
    threshold_px: float = 1.0,
    seed: int = 0,
    config: MaskingConfig = DEFAULT_MASKING_CONFIG,
) -> RansacResult:
    """RANSAC + 8-point fundamental estimation with a Sampson inlier test.

    ``matches`` is (N, 4) with columns x1, y1, x2, y2. Deterministic for a
    given seed. Raises :class:`TooFewMatches` (< 8) or :class:`NoConsensus`
    (best inlier ratio < 0.3).
    """
    matches = np.asarray(matches, dtype=np.float64)
    if matches.ndim != 2 or matches.shape[1] != 4:
        raise InvalidInput(f"matches must be (N, 4), got {matches.shape}")
    n = len(matches)
    if n < 8:
        raise TooFewMatches(f"RANSAC needs >= 8 matches, got {n}")
    pts1 = np.ascontiguousarray(matches[:, :2])
    pts2 = np.ascontiguousarray(matches[:, 2:])
    thr_sq = threshold_px * threshold_px
    rng = np.random.default_rng(seed)

    best_count = -1
    best_f: np.ndarray | None = None
    best_inliers: np.ndarray | None = None
    max_iters = config.ransac_max_iters
    needed = max_iters
    it = 0
    while it < min(needed, max_iters):
        it += 1
        sample = rng.choice(n, size=8, replace=False)
        try:
            f = eight_point(pts1[sample], pts2[sample])
        except np.linalg.LinAlgError:  # pragma: no cover - singular sample
            continue
        if not np.isfinite(f).all() or np.abs(f).max() < 1e-15:
            continue
        err = kernels.sampson_batch(f, pts1, pts2)
        inliers = err < thr_sq
        count = int(inliers.sum())
        if count > best_count:
            best_count = count
            best_f = f
            best_inliers = inliers
            w = count / n
            if w > 0.0:
                denom = np.log1p(-min(w ** 8, 1.0 - 1e-15))
                needed = int(np.ceil(np.log(1.0 - config.ransac_confidence) / denom)) if denom < 0 else max_iters
    if best_inliers is None or best_count / n < config.ransac_min_inlier_ratio:
        raise NoConsensus(
            f"best consensus {best_count}/{n} below ratio {config.ransac_min_inlier_ratio}",
            best_inlier_count=max(best_count, 0),
        )
    # final least-squares refit on the consensus set (kept only if it does not
    # shrink the consensus), then one re-scoring pass
    if best_count >= 8:
        refit = eight_point(pts1[best_inliers], pts2[best_inliers])
        err = kernels.sampson_batch(refit, pts1, pts2)
        refit_inliers = err < thr_sq
        if int(refit_inliers.sum()) >= best_count:
            best_f = refit
            best_inliers = refit_inliers
    return RansacResult(f=FundamentalMatrix(best_f), inliers=best_inliers, num_iterations=it)


# ---------------------------------------------------------------------------
# motion segmentation
# ---------------------------------------------------------------------------

def _grid_matches(flow: FlowField, step: int) -> np.ndarray:
    h, w = flow.shape
    ys = np.arange(0, h, step, dtype=np.float64)
    xs = np.arange(0, w, step, dtype=np.float64)
    gx, gy = np.meshgrid(xs, ys)
    u = flow.uv[::step, ::step, 0]
    v = flow.uv[::step, ::step, 1]
    return np.stack([gx.ravel(), gy.ravel(), (gx + u).ravel(), (gy + v).ravel()], axis=1)


def motion_segment(
    flow_fwd: FlowField,
    flow_bwd: FlowField,
    seed: int = 0,
    config: MaskingConfig = DEFAULT_MASKING_CONFIG,
) -> DynamicMask:
    """Mask pixels whose flow violates the dominant epipolar geometry.

    Fundamental matrices are fit on grid-subsampled flow correspondences in
    both directions; each pixel's squared Sampson error is evaluated densely
    for both fields and the per-pixel maximum is thresholded at
    ``H*W / error_area_divisor``. A failed consensus yields an empty mask and
    a warning (the frame pair contributes no motion evidence).
    """
    if flow_fwd.shape != flow_bwd.shape:
        raise DimensionMismatch(f"flow shapes differ: {flow_fwd.shape} vs {flow_bwd.shape}")
    h, w = flow_fwd.shape
    threshold = h * w / config.error_area_divisor
    try:
        res_f = estimate_fundamental_ransac(
            _grid_matches(flow_fwd, config.grid_step), config.ransac_threshold_px, seed, config
        )
        res_b = estimate_fundamental_ransac(
            _grid_matches(flow_bwd, config.grid_step), config.ransac_threshold_px, seed + 1, config
        )
    except (NoConsensus, TooFewMatches) as exc:
        warnings.warn(f"motion segmentation skipped for frame {flow_fwd.frame_a}: {exc}")
        return DynamicMask.empty(flow_fwd.frame_a, h, w)
    err_fwd = kernels.sampson_flow_map(res_f.f.m, flow_fwd.uv)
    # backward error lives on frame_b's grid; pull it back to frame_a pixels
    # through the forward flow (nearest-neighbor) so the max is per-pixel of frame_a
    err_bwd_on_b = kernels.sampson_flow_map(res_b.f.m, flow_bwd.uv)
    ys = np.arange(h)[:, None] + flow_fwd.uv[:, :, 1]
    xs = np.arange(w)[None, :] + flow_fwd.uv[:, :, 0]
    yi = np.clip(np.rint(ys), 0, h - 1).astype(np.int64)
    xi = np.clip(np.rint(xs), 0, w - 1).astype(np.int64)
    err_bwd = err_bwd_on_b[yi, xi]
    return DynamicMask(flow_fwd.frame_a, np.maximum(err_fwd, err_bwd) > threshold)


# ---------------------------------------------------------------------------
# mask composition
# ---------------------------------------------------------------------------

def union_masks(parts: list[DynamicMask]) -> DynamicMask:
    """Pixelwise OR of masks for one frame."""
    if not parts:
        raise InvalidInput("union of zero masks is undefined")
    frame = parts[0].frame_index
    shape = parts[0].bitmap.shape
    out = np.zeros(shape, dtype=bool)
    for m in parts:
        if m.frame_index != frame:
            raise InvalidInput(f"cannot union masks of frames {frame} and {m.frame_index}")
        if m.bitmap.shape != shape:
            raise DimensionMismatch(f"mask shapes differ: {shape} vs {m.bitmap.shape}")
        out |= m.bitmap
    return DynamicMask(frame, out)


def hold_propagate(keyframe_mask: DynamicMask, horizon: int) -> list[DynamicMask]:
    """Copy a keyframe mask onto the next ``horizon`` frames.

    With keyframes every N frames, ``horizon = N - 1`` gives seamless
    coverage (keyframe + held copies) until the next keyframe.
    """
    if horizon < 0:
        raise InvalidInput("horizon must be non-negative")
    return [
        DynamicMask(keyframe_mask.frame_index + d, keyframe_mask.bitmap.copy())
        for d in range(1, horizon + 1)
    ]


def semantic_class_filter(
    labelmap: np.ndarray,
    frame_index: int = 0,
    class_ids: frozenset[int] = DYNAMIC_CLASS_IDS,
) -> DynamicMask:
    """Mask of pixels whose semantic class id belongs to the movable set."""
    lm = np.asarray(labelmap)
    if lm.ndim != 2:
        raise DimensionMismatch(f"labelmap must be 2-D, got {lm.shape}")
    return DynamicMask(frame_index, np.isin(lm, np.fromiter(class_ids, dtype=lm.dtype)))


def interaction_touch_filter(
    regions: list[tuple[np.ndarray, int]],
    frame_index: int = 0,
    held_classes: frozenset[int] = HELD_TOUCH_CLASSES,
) -> DynamicMask:
    """Union of region masks whose touch class marks the object as held."""
    if not regions:
        raise InvalidInput("need at least one region (possibly with empty mask)")
    shape = np.asarray(regions[0][0]).shape
    out = np.zeros(shape, dtype=bool)
    for bitmap, touch_class in regions:
        bm = np.asarray(bitmap).astype(bool)
        if bm.shape != shape:
            raise DimensionMismatch(f"region shapes differ: {shape} vs {bm.shape}")
        if touch_class in held_classes:
            out |= bm
    return DynamicMask(frame_index, out)
