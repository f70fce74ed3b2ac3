"""Global structure-from-motion over mask-filtered correspondences.

Stages: pairwise essential-matrix RANSAC builds a view graph; rotation
averaging (spanning-tree init + iterative so(3) refinement) and position
averaging (scale-eliminated direction constraints) initialize global poses;
surviving tracks are triangulated and polished by Levenberg-Marquardt bundle
adjustment with a Huber robustifier and analytic Jacobians evaluated by the
compiled kernels.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import (
    Diverged,
    EmptyGraph,
    InsufficientParallax,
    InvalidInput,
    NoConsensus,
    TooFewMatches,
)
from .geometry import (
    Intrinsics,
    Pose,
    Trajectory,
    matrix_to_quat,
    so3_exp,
    so3_log,
)
from .masking import DynamicMask, eight_point
from .tracking import CorrespondenceSet, Tracklet, extract_correspondences


@dataclass(frozen=True)
class SfmConfig:
    # frames near a clip boundary may share only a couple dozen tracks with
    # their neighbours; the floor stays well above the 8-point minimum while
    # letting those frames register
    min_matches: int = 16
    ransac_threshold_px: float = 1.0
    ransac_max_iters: int = 5000
    ransac_confidence: float = 0.999
    rotation_only_ratio: float = 0.95  # rot-only inliers >= ratio * essential inliers -> no direction
    max_pair_gap: int | None = None  # limit view-graph pairs to |i-j| <= gap (None = all)
    rot_avg_max_iters: int = 50
    rot_avg_tol: float = 1e-13
    pos_irls_rounds: int = 6
    # straight-line motion leaves along-track positions unconstrained by
    # camera-camera directions; bearings toward this many well-covered tracks
    # join the solve when that happens, and extra refit rounds let the
    # spacing settle from its collapsed initialization
    pos_max_point_tracks: int = 16
    pos_direction_spread_min: float = 0.05
    pos_lateral_rounds: int = 24
    huber_delta_px: float = 2.0
    ba_max_iters: int = 60
    ba_lambda_init: float = 1e-6
    ba_lambda_up: float = 10.0
    ba_lambda_down: float = 3.0
    ba_max_retries: int = 8
    ba_gradient_tol: float = 1e-10
    ba_ftol: float = 1e-14
    refine_focal: bool = False
    tri_max_reproj_px: float = 4.0
    tri_min_angle_deg: float = 1.0
    # averaging-stage poses can sit several pixels off; the first triangulation
    # pass widens the gate by this factor, then poses are bundle-adjusted and
    # landmarks re-triangulated under the strict gate (1.0 = single pass)
    tri_bootstrap_factor: float = 4.0
    # a bundle with too few landmarks can overfit noise to zero residual while
    # the trajectory is nonsense; gates escalate until at least this many
    # landmarks survive (capped), and a final model below it is a failure
    tri_min_landmarks: int = 24
    registered_min_fraction: float = 0.80
    retry_attempts: int = 3


DEFAULT_SFM_CONFIG = SfmConfig()

# camera centers closer to a candidate point than this subtend no usable angle
_RAY_EPS = 1e-12


# ---------------------------------------------------------------------------
# view graph
# ---------------------------------------------------------------------------

@dataclass
class ViewEdge:
    i: int
    j: int
    rotation: np.ndarray  # (3,3) camera-i to camera-j
    direction: np.ndarray | None  # unit translation direction (cam-j frame), None if degenerate
    inliers: np.ndarray  # bool over the pair's match list
    num_matches: int
    degenerate_translation: bool = False
    # inlier matches: track ids plus unit bearings in each camera frame;
    # position averaging falls back on these when camera-camera directions
    # alone cannot pin positions (straight-line motion)
    ids: np.ndarray | None = None
    bearings_i: np.ndarray | None = None
    bearings_j: np.ndarray | None = None


@dataclass
class ViewGraph:
    nodes: list[int]
    edges: dict[tuple[int, int], ViewEdge] = field(default_factory=dict)


def _fit_essential(xn1: np.ndarray, xn2: np.ndarray) -> np.ndarray:
    """8-point fit on normalized image coordinates, projected to the essential manifold."""
    f = eight_point(xn1, xn2)
    u, s, vt = np.linalg.svd(f)
    sm = (s[0] + s[1]) * 0.5
    return (u * np.array([sm, sm, 0.0])) @ vt


def _fit_essential_batch(x1: np.ndarray, x2: np.ndarray, samples: np.ndarray) -> np.ndarray:
    """Vectorized :func:`_fit_essential` over minimal samples (B,8) -> (B,3,3)."""
    b = len(samples)
    p1 = x1[samples]  # (B,8,2)
    p2 = x2[samples]

    def normalize(p):
        centroid = p.mean(axis=1, keepdims=True)
        centered = p - centroid
        rms = np.sqrt((centered ** 2).sum(axis=2).mean(axis=1))
        s = np.where(rms > 1e-12, np.sqrt(2.0) / np.maximum(rms, 1e-300), 1.0)
        t = np.zeros((b, 3, 3))
        t[:, 0, 0] = s
        t[:, 1, 1] = s
        t[:, 2, 2] = 1.0
        t[:, 0, 2] = -s * centroid[:, 0, 0]
        t[:, 1, 2] = -s * centroid[:, 0, 1]
        return centered * s[:, None, None], t

    n1, t1 = normalize(p1)
    n2, t2 = normalize(p2)
    a = np.empty((b, 8, 9))
    x1n, y1n = n1[:, :, 0], n1[:, :, 1]
    x2n, y2n = n2[:, :, 0], n2[:, :, 1]
    a[:, :, 0] = x2n * x1n
    a[:, :, 1] = x2n * y1n
    a[:, :, 2] = x2n
    a[:, :, 3] = y2n * x1n
    a[:, :, 4] = y2n * y1n
    a[:, :, 5] = y2n
    a[:, :, 6] = x1n
    a[:, :, 7] = y1n
    a[:, :, 8] = 1.0
    _, _, vt = np.linalg.svd(a)
    f_hat = vt[:, -1, :].reshape(b, 3, 3)
    f = np.transpose(t2, (0, 2, 1)) @ f_hat @ t1
    # essential-manifold projection (zeroes the third singular value, so a
    # separate rank-2 step on f_hat would be redundant)
    u, s, vt2 = np.linalg.svd(f)
    sm = (s[:, 0] + s[:, 1]) * 0.5
    d = np.zeros((b, 3))
    d[:, 0] = sm
    d[:, 1] = sm
    return (u * d[:, None, :]) @ vt2


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def _cross3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.array(
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    )


def _tangent_basis(t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two unit vectors spanning the plane orthogonal to t."""
    ref = np.array([1.0, 0.0, 0.0]) if abs(t[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = _cross3(t, ref)
    u /= np.linalg.norm(u)
    return u, _cross3(t, u)


def _refine_two_view(
    r: np.ndarray,
    t: np.ndarray,
    pts1: np.ndarray,
    pts2: np.ndarray,
    k: Intrinsics,
    iters: int = 6,
) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Newton polish of a relative pose on the inlier Sampson cost.

    Minimal-sample estimates carry noise-driven bias, worst for short
    baselines; a few damped steps over (rotation, direction-on-sphere) cut
    direction errors by an order of magnitude. Returns the refined pair, or
    the input if no step reduced the cost.
    """
    ki = k.inverse_matrix
    kit = ki.T

    def pixel_f(rm, tv):
        return kit @ (_skew(tv) @ rm) @ ki

    def residuals(rm, tv):
        return np.sqrt(kernels.sampson_batch(pixel_f(rm, tv), pts1, pts2) + 1e-300)

    res = residuals(r, t)
    cost = float(res @ res)
    h = 1e-7
    lam = 1e-10
    fs = np.empty((5, 3, 3))
    for _ in range(iters):
        u, v = _tangent_basis(t)
        for p in range(3):
            w = np.zeros(3)
            w[p] = h
            fs[p] = pixel_f(so3_exp(w) @ r, t)
        for p, axis in enumerate((u, v)):
            t_p = t + h * axis
            fs[3 + p] = pixel_f(r, t_p / np.linalg.norm(t_p))
        perturbed = np.sqrt(kernels.sampson_multi(fs, pts1, pts2) + 1e-300)
        jac = (perturbed - res).T / h
        g = jac.T @ res
        hess = jac.T @ jac
        hess[np.arange(5), np.arange(5)] += lam
        try:
            step = np.linalg.solve(hess, -g)
        except np.linalg.LinAlgError:  # pragma: no cover
            break
        r_new = so3_exp(step[:3]) @ r
        t_new = t + step[3] * u + step[4] * v
        t_new /= np.linalg.norm(t_new)
        res_new = residuals(r_new, t_new)
        cost_new = float(res_new @ res_new)
        if not np.isfinite(cost_new) or cost_new >= cost:
            break
        improved = (cost - cost_new) / max(cost, 1e-300)
        r, t, res, cost = r_new, t_new, res_new, cost_new
        if improved < 1e-10:
            break
    return r, t


def _cheirality_depths(r: np.ndarray, t: np.ndarray, xn1: np.ndarray, xn2: np.ndarray):
    """Closed-form two-view depths for rays xn (N,3); returns (z1, z2)."""
    a = xn1 @ r.T  # rotated first rays
    b = xn2
    aa = (a * a).sum(axis=1)
    bb = (b * b).sum(axis=1)
    ab = (a * b).sum(axis=1)
    at = a @ t
    bt = b @ t
    det = aa * bb - ab * ab
    det = np.where(np.abs(det) < 1e-18, 1e-18, det)
    z1 = (-at * bb + ab * bt) / det
    z2 = (aa * bt - ab * at) / det
    return z1, z2


def _decompose_essential(e: np.ndarray, xn1: np.ndarray, xn2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pick the (R, t) candidate with the best cheirality vote."""
    u, _, vt = np.linalg.svd(e)
    if np.linalg.det(u) < 0:
        u = -u
    if np.linalg.det(vt) < 0:
        vt = -vt
    w = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    best = None
    best_votes = -1
    for r in (u @ w @ vt, u @ w.T @ vt):
        for t in (u[:, 2], -u[:, 2]):
            z1, z2 = _cheirality_depths(r, t, xn1, xn2)
            votes = int(((z1 > 0) & (z2 > 0)).sum())
            if votes > best_votes:
                best_votes = votes
                best = (r, t)
    return best


def _kabsch_rotation(b1: np.ndarray, b2: np.ndarray) -> np.ndarray:
    """Rotation best mapping unit bearings b1 onto b2."""
    c = b2.T @ b1
    u, _, vt = np.linalg.svd(c)
    d = np.sign(np.linalg.det(u @ vt))
    return (u * np.array([1.0, 1.0, d])) @ vt


def _normalized_rays(pixels: np.ndarray, k: Intrinsics) -> np.ndarray:
    """(N,3) rays (x', y', 1) through the pixels."""
    out = np.empty((len(pixels), 3))
    out[:, 0] = (pixels[:, 0] - k.cx) / k.fx
    out[:, 1] = (pixels[:, 1] - k.cy) / k.fy
    out[:, 2] = 1.0
    return out


def _pixel_f_from_e(e: np.ndarray, k: Intrinsics) -> np.ndarray:
    ki = k.inverse_matrix
    return ki.T @ e @ ki


def _estimate_edge(
    pts1: np.ndarray,
    pts2: np.ndarray,
    k: Intrinsics,
    rng: np.random.Generator,
    config: SfmConfig,
) -> tuple[np.ndarray, np.ndarray | None, np.ndarray, bool] | None:
    """RANSAC relative pose for one frame pair.

    Returns (R, direction|None, inlier mask, degenerate_translation) or None
    when no consensus emerges.
    """
    n = len(pts1)
    xn1 = _normalized_rays(pts1, k)
    xn2 = _normalized_rays(pts2, k)
    thr_sq = config.ransac_threshold_px ** 2
    ki = k.inverse_matrix

    best_count = -1
    best_e = None
    best_inliers = None
    needed = config.ransac_max_iters
    it = 0
    batch = 12  # cheap first probe; clean data exits immediately, noise ramps up
    while it < min(needed, config.ransac_max_iters):
        b = min(batch, min(needed, config.ransac_max_iters) - it)
        batch = 64
        samples = np.argsort(rng.random((b, n)), axis=1)[:, :8]
        es = _fit_essential_batch(xn1[:, :2], xn2[:, :2], samples)
        valid = np.isfinite(es).all(axis=(1, 2)) & (np.abs(es).max(axis=(1, 2)) >= 1e-15)
        f_px = np.einsum("ji,bjk,kl->bil", ki, es, ki)
        errs = kernels.sampson_multi(f_px, pts1, pts2)
        counts = np.where(valid, (errs < thr_sq).sum(axis=1), -1)
        for m in range(b):
            it += 1
            if counts[m] > best_count:
                best_count = int(counts[m])
                best_e = es[m]
                best_inliers = errs[m] < thr_sq
                w_ratio = best_count / n
                if w_ratio > 0.0:
                    denom = np.log1p(-min(w_ratio ** 8, 1.0 - 1e-15))
                    if denom < 0:
                        needed = int(np.ceil(np.log(1.0 - config.ransac_confidence) / denom))
            if it >= min(needed, config.ransac_max_iters):
                break
    if best_e is None or best_count < 8:
        return None
    # refit on consensus
    refit = _fit_essential(xn1[best_inliers, :2], xn2[best_inliers, :2])
    err = kernels.sampson_batch(_pixel_f_from_e(refit, k), pts1, pts2)
    refit_inliers = err < thr_sq
    if int(refit_inliers.sum()) >= best_count:
        best_e = refit
        best_inliers = refit_inliers
        best_count = int(refit_inliers.sum())

    # competing rotation-only model: catches zero-baseline pairs where the
    # essential decomposition is meaningless
    b1 = xn1 / np.linalg.norm(xn1, axis=1, keepdims=True)
    b2 = xn2 / np.linalg.norm(xn2, axis=1, keepdims=True)
    ang_thr = config.ransac_threshold_px / (0.5 * (k.fx + k.fy))
    r_rot = _kabsch_rotation(b1, b2)
    for _ in range(2):
        resid = np.arccos(np.clip((b2 * (b1 @ r_rot.T)).sum(axis=1), -1.0, 1.0))
        rot_inliers = resid < ang_thr
        if int(rot_inliers.sum()) >= 3:
            r_rot = _kabsch_rotation(b1[rot_inliers], b2[rot_inliers])
    resid = np.arccos(np.clip((b2 * (b1 @ r_rot.T)).sum(axis=1), -1.0, 1.0))
    rot_inliers = resid < ang_thr
    rot_count = int(rot_inliers.sum())

    if rot_count >= config.rotation_only_ratio * best_count:
        return r_rot, None, rot_inliers, True

    r, t = _decompose_essential(best_e, xn1[best_inliers], xn2[best_inliers])
    t = t / np.linalg.norm(t)
    r, t = _refine_two_view(r, t, pts1[best_inliers], pts2[best_inliers], k)
    return r, t, best_inliers, False


def build_view_graph(
    corr: CorrespondenceSet,
    k: Intrinsics,
    min_matches: int = 16,
    seed: int = 0,
    config: SfmConfig = DEFAULT_SFM_CONFIG,
) -> ViewGraph:
    """Estimate relative poses for every frame pair with enough matches.

    Each pair gets a deterministic RNG derived from (seed, i, j). An edge
    survives when its RANSAC consensus has at least ``min_matches`` inliers.
    Raises :class:`EmptyGraph` when nothing survives.
    """
    nodes = corr.frame_ids()
    graph = ViewGraph(nodes=nodes)
    for (i, j), (pts1, pts2, _ids) in corr.items():
        if len(pts1) < max(min_matches, 8):
            continue
        if config.max_pair_gap is not None and j - i > config.max_pair_gap:
            continue
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, i, j)))
        est = _estimate_edge(pts1, pts2, k, rng, config)
        if est is None:
            continue
        r, direction, inliers, degenerate = est
        if int(inliers.sum()) < min_matches:
            continue
        ray1 = _normalized_rays(pts1[inliers], k)
        ray2 = _normalized_rays(pts2[inliers], k)
        graph.edges[(i, j)] = ViewEdge(
            i=i,
            j=j,
            rotation=r,
            direction=direction,
            inliers=inliers,
            num_matches=len(pts1),
            degenerate_translation=degenerate,
            ids=np.asarray(_ids)[inliers],
            bearings_i=ray1 / np.linalg.norm(ray1, axis=1, keepdims=True),
            bearings_j=ray2 / np.linalg.norm(ray2, axis=1, keepdims=True),
        )
    if not graph.edges:
        raise EmptyGraph("no frame pair produced a usable relative pose")
    return graph


# ---------------------------------------------------------------------------
# rotation averaging
# ---------------------------------------------------------------------------

def _largest_component(nodes: list[int], edges) -> list[int]:
    parent = {n: n for n in nodes}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for (i, j) in edges:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    comps: dict[int, list[int]] = {}
    for n in nodes:
        comps.setdefault(find(n), []).append(n)
    return max(comps.values(), key=lambda c: (len(c), -min(c)))


def rotation_averaging(graph: ViewGraph, config: SfmConfig = DEFAULT_SFM_CONFIG) -> dict[int, np.ndarray]:
    """Globally consistent rotations for the largest connected component.

    Spanning-tree chaining seeds the estimate; iterative linearized least
    squares over all edges refines it. The smallest frame in the component is
    the gauge anchor (identity).
    """
    if not graph.edges:
        raise EmptyGraph("rotation averaging needs at least one edge")
    comp = sorted(_largest_component(graph.nodes, graph.edges.keys()))
    comp_set = set(comp)
    adj: dict[int, list[tuple[int, int, bool]]] = {n: [] for n in comp}
    edge_list = []
    for idx, ((i, j), e) in enumerate(sorted(graph.edges.items())):
        if i in comp_set and j in comp_set:
            adj[i].append((j, idx, False))
            adj[j].append((i, idx, True))
            edge_list.append(e)
    anchor = comp[0]
    rot: dict[int, np.ndarray] = {anchor: np.eye(3)}
    stack = [anchor]
    while stack:
        cur = stack.pop()
        for nbr, idx, reverse in adj[cur]:
            if nbr in rot:
                continue
            r_ij = edge_list[idx].rotation
            rot[nbr] = (r_ij.T @ rot[cur]) if reverse else (r_ij @ rot[cur])
            stack.append(nbr)

    order = {n: i for i, n in enumerate(comp)}
    n_free = len(comp) - 1  # anchor excluded

    def var_col(node: int) -> int | None:
        i = order[node]
        return None if node == anchor else 3 * (i - 1 if i > order[anchor] else i)

    # order[anchor] == 0 since comp sorted and anchor = comp[0]
    for _ in range(config.rot_avg_max_iters):
        rows = []
        rhs = []
        for e in edge_list:
            r_meas = e.rotation
            r0 = so3_log(r_meas.T @ (rot[e.j] @ rot[e.i].T))
            row = np.zeros((3, 3 * n_free))
            ci = var_col(e.i)
            cj = var_col(e.j)
            if ci is not None:
                row[:, ci : ci + 3] = -np.eye(3)
            if cj is not None:
                row[:, cj : cj + 3] = r_meas.T
            rows.append(row)
            rhs.append(-r0)
        if n_free == 0:
            break
        a = np.concatenate(rows)
        b = np.concatenate(rhs)
        delta, *_ = np.linalg.lstsq(a, b, rcond=None)
        for node in comp:
            c = var_col(node)
            if c is not None:
                rot[node] = so3_exp(delta[c : c + 3]) @ rot[node]
        if float(np.abs(delta).max()) < config.rot_avg_tol:
            break
    return rot


# ---------------------------------------------------------------------------
# position averaging
# ---------------------------------------------------------------------------

@dataclass
class PositionSolution:
    centers: dict[int, np.ndarray]
    degenerate_lateral: bool = False


def _collect_point_bearings(
    graph: ViewGraph,
    rotations: dict[int, np.ndarray],
    index: dict[int, int],
    max_tracks: int,
) -> list[tuple[int, int, np.ndarray]]:
    """World-frame bearings (track column, frame, unit direction) for the
    best-covered inlier tracks; empty when edges carry no match data."""
    per_track: dict[int, dict[int, np.ndarray]] = {}
    for _, e in sorted(graph.edges.items()):
        if e.ids is None:
            continue
        for f, bearings in ((e.i, e.bearings_i), (e.j, e.bearings_j)):
            if f not in index:
                continue
            rt = rotations[f].T
            for tid, b in zip(e.ids, bearings):
                per_track.setdefault(int(tid), {})[f] = rt @ b
    ranked = sorted(per_track.items(), key=lambda kv: (-len(kv[1]), kv[0]))
    obs: list[tuple[int, int, np.ndarray]] = []
    col = 0
    for _, seen in ranked[: max(0, max_tracks)]:
        if len(seen) < 3:
            continue
        for f, d in sorted(seen.items()):
            obs.append((col, f, d / np.linalg.norm(d)))
        col += 1
    return obs


def position_averaging(
    graph: ViewGraph,
    rotations: dict[int, np.ndarray],
    config: SfmConfig = DEFAULT_SFM_CONFIG,
) -> PositionSolution:
    """Camera centers from pairwise translation directions.

    For edge (i, j) the world-frame direction of c_j − c_i is −R_jᵀ t̂_ij; the
    per-edge scale is eliminated analytically by minimizing the component of
    c_j − c_i orthogonal to that direction. One inhomogeneous row pins the sum
    of implied scales (otherwise zero is a solution); the result is rescaled
    to unit mean baseline. Huber reweighting suppresses outlier edges.

    Straight-line motion makes every baseline point the same way, leaving the
    along-track spacing unconstrained (and mirror-symmetric). When the
    baseline directions are nearly parallel, bearings toward a few
    well-tracked points join the solve — the refit rounds keep every implied
    depth positive, which picks the cheirality-correct branch — and the
    result is flagged ``degenerate_lateral``.

    Raises :class:`InsufficientParallax` when no edge carries a direction, or
    when the constraint graph leaves some camera unconstrained.
    """
    frames = sorted(rotations.keys())
    if len(frames) == 1:
        return PositionSolution(centers={frames[0]: np.zeros(3)})
    usable = []
    for (i, j), e in sorted(graph.edges.items()):
        if e.direction is None or e.degenerate_translation:
            continue
        if i in rotations and j in rotations:
            d = -rotations[j].T @ e.direction
            usable.append((i, j, d / np.linalg.norm(d)))
    if not usable:
        raise InsufficientParallax("no view-graph edge carries a translation direction")

    # restrict to frames actually constrained by some direction edge
    constrained = sorted({i for i, _, _ in usable} | {j for _, j, _ in usable})
    index = {f: n for n, f in enumerate(constrained)}
    n_cams = len(constrained)
    m = len(usable)
    dir_stack = np.stack([d for _, _, d in usable])
    spread = np.linalg.svd(dir_stack, compute_uv=False)
    lateral = n_cams > 2 and bool(
        spread[1] < config.pos_direction_spread_min * spread[0]
    )
    point_obs = (
        _collect_point_bearings(graph, rotations, index, config.pos_max_point_tracks)
        if lateral
        else []
    )
    n_tracks = max((c for c, _, _ in point_obs), default=-1) + 1

    # --- initialization: least squares on the perpendicular component of
    # every baseline (sign-agnostic, exact for generic motion, collapsed
    # along the axis for straight-line motion), one row pinning the sum of
    # implied scales so zero is not a solution
    n_var = 3 * (n_cams - 1)  # first constrained frame sits at the origin

    def cam_cols(f: int) -> int | None:
        n = index[f]
        return None if n == 0 else 3 * (n - 1)

    rows = np.zeros((3 * m + 1, n_var))
    rhs = np.zeros(3 * m + 1)
    srow = np.zeros(n_var)
    for ei, (i, j, d) in enumerate(usable):
        proj = np.eye(3) - np.outer(d, d)
        ci = cam_cols(i)
        cj = cam_cols(j)
        if ci is not None:
            rows[3 * ei : 3 * ei + 3, ci : ci + 3] -= proj
            srow[ci : ci + 3] -= d
        if cj is not None:
            rows[3 * ei : 3 * ei + 3, cj : cj + 3] += proj
            srow[cj : cj + 3] += d
    gauge_w = np.sqrt(m)
    rows[-1] = gauge_w * srow
    rhs[-1] = gauge_w * m
    sol = np.linalg.lstsq(rows, rhs, rcond=None)[0]

    # --- refinement: per-constraint targets (x_dst − x_src) ≈ s·d with the
    # implied length s refrozen each round and clamped positive; the normal
    # equations form one graph Laplacian shared by the three axes
    src = np.fromiter((index[i] for i, _, _ in usable), dtype=np.int64, count=m)
    dst = np.fromiter((index[j] for _, j, _ in usable), dtype=np.int64, count=m)
    dirs = dir_stack
    if point_obs:
        src = np.concatenate(
            [src, np.fromiter((index[f] for _, f, _ in point_obs), dtype=np.int64)]
        )
        dst = np.concatenate(
            [dst, np.fromiter((n_cams + c for c, _, _ in point_obs), dtype=np.int64)]
        )
        dirs = np.concatenate([dirs, np.stack([d for _, _, d in point_obs])])

    n_all = n_cams + n_tracks
    x = np.zeros((n_all, 3))
    x[1:n_cams] = sol.reshape(-1, 3)
    if lateral:
        # the collapsed initialization is mirror-symmetric and the refit
        # rounds cannot break the tie; the sign of each direction along the
        # dominant motion axis orders the frames, so a 1-D solve on those
        # components seeds the correct branch with nonzero spacing
        u_axis = np.linalg.svd(dir_stack, compute_uv=True)[2][0]
        alpha = dir_stack @ u_axis
        lap1 = np.zeros((n_cams, n_cams))
        ones = np.ones(m)
        np.add.at(lap1, (dst[:m], dst[:m]), ones)
        np.add.at(lap1, (src[:m], src[:m]), ones)
        np.add.at(lap1, (dst[:m], src[:m]), -ones)
        np.add.at(lap1, (src[:m], dst[:m]), -ones)
        rhs1 = np.zeros(n_cams)
        np.add.at(rhs1, dst[:m], alpha)
        np.add.at(rhs1, src[:m], -alpha)
        try:
            a_pos = np.concatenate([[0.0], np.linalg.solve(lap1[1:, 1:], rhs1[1:])])
        except np.linalg.LinAlgError:
            raise InsufficientParallax(
                "translation directions leave camera positions underdetermined"
            ) from None
        x[:n_cams] += (a_pos - (x[:n_cams] @ u_axis))[:, None] * u_axis
    for c, f, d in point_obs:
        if x[n_cams + c] @ x[n_cams + c] == 0.0:
            # unit depth along the first observed bearing: in front of the
            # camera, which seeds the cheirality-correct mirror branch
            x[n_cams + c] = x[index[f]] + d
    if point_obs:
        # settle each point onto its bearing lines (given the seeded centers),
        # reflecting across the motion axis if it lands behind the cameras
        per_track: dict[int, list[tuple[int, np.ndarray]]] = {}
        for c, f, d in point_obs:
            per_track.setdefault(c, []).append((index[f], d))
        cam_centroid = x[:n_cams].mean(axis=0)
        for c, obs in per_track.items():
            a_mat = np.zeros((3, 3))
            b_vec = np.zeros(3)
            for fi, d in obs:
                proj = np.eye(3) - np.outer(d, d)
                a_mat += proj
                b_vec += proj @ x[fi]
            try:
                p = np.linalg.solve(a_mat, b_vec)
            except np.linalg.LinAlgError:
                continue
            depths = [d @ (p - x[fi]) for fi, d in obs]
            if float(np.median(depths)) < 0.0 and lateral:
                axial = cam_centroid + ((p - cam_centroid) @ u_axis) * u_axis
                p = 2.0 * axial - p
            x[n_cams + c] = p

    rounds = config.pos_lateral_rounds if lateral else config.pos_irls_rounds
    for _ in range(max(1, rounds)):
        diff = x[dst] - x[src]
        s = (diff * dirs).sum(axis=1)
        cam_floor = 0.05 * float(np.median(np.abs(s[:m])))
        s[:m] = np.maximum(s[:m], cam_floor)
        if len(s) > m:
            pt_floor = 0.05 * float(np.median(np.abs(s[m:])))
            s[m:] = np.maximum(s[m:], pt_floor)
        resid = np.linalg.norm(diff - s[:, None] * dirs, axis=1)
        med = float(np.median(resid))
        if med > 1e-12:
            delta = 1.345 * med
            omega = np.where(resid <= delta, 1.0, delta / np.maximum(resid, 1e-300))
        else:
            omega = np.ones(len(src))
        lap = np.zeros((n_all, n_all))
        np.add.at(lap, (dst, dst), omega)
        np.add.at(lap, (src, src), omega)
        np.add.at(lap, (dst, src), -omega)
        np.add.at(lap, (src, dst), -omega)
        target = (omega * s)[:, None] * dirs
        rhs2 = np.zeros((n_all, 3))
        np.add.at(rhs2, dst, target)
        np.add.at(rhs2, src, -target)
        try:
            np.linalg.cholesky(lap[1:, 1:])
        except np.linalg.LinAlgError:
            raise InsufficientParallax(
                "translation directions leave camera positions underdetermined"
            ) from None
        x_new = np.vstack([np.zeros(3), np.linalg.solve(lap[1:, 1:], rhs2[1:])])
        shift = float(np.abs(x_new - x).max())
        x = x_new
        if shift < 1e-13 * max(1.0, float(np.abs(x).max())):
            break

    centers_arr = x[:n_cams]
    # unit mean baseline gauge
    baselines = np.linalg.norm(
        centers_arr[dst[:m]] - centers_arr[src[:m]], axis=1
    )
    mean_b = float(baselines.mean())
    if mean_b > 1e-12:
        centers_arr = centers_arr / mean_b
    return PositionSolution(
        centers={f: centers_arr[index[f]].copy() for f in constrained},
        degenerate_lateral=lateral,
    )


# ---------------------------------------------------------------------------
# landmarks / scene model
# ---------------------------------------------------------------------------

@dataclass
class Landmark:
    id: int
    position: np.ndarray  # (3,) world
    observations: list[tuple[int, np.ndarray]]  # (frame, pixel (2,))


@dataclass
class SceneModel:
    trajectory: Trajectory
    landmarks: list[Landmark]
    intrinsics: Intrinsics
    mean_reprojection_error: float = float("inf")
    max_reprojection_error: float = float("inf")
    status: str = "ok"  # "ok" | "failed"
    failure_reason: str | None = None
    ba_cost_history: list[float] = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return self.status != "ok"


def _collect_track_observations(
    corr: CorrespondenceSet, poses: dict[int, Pose]
) -> list[tuple[int, np.ndarray, np.ndarray]]:
    """Group registered-frame observations per track.

    Returns ``(track id, frames (F,), pixels (F,2))`` triples sorted by track
    id with frames ascending; the first pixel seen for a (track, frame) pair
    wins. Grouping depends only on which frames are registered, so callers
    may reuse the result across repeated triangulations of the same cameras.
    """
    tid_parts: list[np.ndarray] = []
    frame_parts: list[np.ndarray] = []
    px_parts: list[np.ndarray] = []
    for (i, j), (pts1, pts2, ids) in corr.items():
        idarr = np.asarray(ids, dtype=np.int64)
        if i in poses:
            tid_parts.append(idarr)
            frame_parts.append(np.full(len(idarr), i, dtype=np.int64))
            px_parts.append(pts1)
        if j in poses:
            tid_parts.append(idarr)
            frame_parts.append(np.full(len(idarr), j, dtype=np.int64))
            px_parts.append(pts2)
    if not tid_parts:
        return []
    tids = np.concatenate(tid_parts)
    frames = np.concatenate(frame_parts)
    pixels = np.concatenate(px_parts).astype(np.float64, copy=False)
    span = int(frames.max()) + 1
    _, first = np.unique(tids * span + frames, return_index=True)
    tids, frames, pixels = tids[first], frames[first], pixels[first]
    starts = np.flatnonzero(np.r_[True, tids[1:] != tids[:-1]])
    stops = np.r_[starts[1:], len(tids)]
    return [
        (int(tids[s]), frames[s:e], pixels[s:e]) for s, e in zip(starts, stops)
    ]


def triangulate_landmarks(
    corr: CorrespondenceSet,
    poses: dict[int, Pose],
    k: Intrinsics,
    config: SfmConfig = DEFAULT_SFM_CONFIG,
    max_reproj_px: float | None = None,
    track_obs: list[tuple[int, np.ndarray, np.ndarray]] | None = None,
) -> list[Landmark]:
    """DLT-triangulate every track with >= 2 registered observations.

    A landmark is kept when every observing view reprojects within
    ``tri_max_reproj_px`` (or the ``max_reproj_px`` override), the widest
    pair of rays subtends more than ``tri_min_angle_deg``, and all depths
    are positive. ``track_obs`` accepts the precomputed grouping from
    :func:`_collect_track_observations` so gate sweeps skip that pass.
    """
    gate = config.tri_max_reproj_px if max_reproj_px is None else max_reproj_px
    if track_obs is None:
        track_obs = _collect_track_observations(corr, poses)
    if not track_obs:
        return []
    frame_arr = np.array(sorted(poses), dtype=np.int64)
    rmats = np.stack([poses[int(f)].rotation for f in frame_arr])
    tvecs = np.stack([poses[int(f)].t for f in frame_arr])
    centers = np.stack([poses[int(f)].center for f in frame_arr])
    pmats = k.matrix @ np.concatenate([rmats, tvecs[:, :, None]], axis=2)
    landmarks = []
    for tid, frames, pixels in track_obs:
        if len(frames) < 2:
            continue
        cols = np.searchsorted(frame_arr, frames)
        p = pmats[cols]
        a = np.empty((2 * len(frames), 4))
        a[0::2] = pixels[:, 0, None] * p[:, 2] - p[:, 0]
        a[1::2] = pixels[:, 1, None] * p[:, 2] - p[:, 1]
        _, _, vt = np.linalg.svd(a)
        xh = vt[-1]
        if abs(xh[3]) < 1e-14:
            continue  # point at infinity fails cheirality
        point = xh[:3] / xh[3]
        z = rmats[cols, 2] @ point + tvecs[cols, 2]
        if z.min() <= 0.0:
            continue
        cam_pts = rmats[cols] @ point + tvecs[cols]
        uv = k.project(cam_pts)
        reproj = np.linalg.norm(uv - pixels, axis=1)
        if float(reproj.max()) >= gate:
            continue
        rays = centers[cols] - point
        norms = np.linalg.norm(rays, axis=1)
        rays = rays[norms >= _RAY_EPS] / norms[norms >= _RAY_EPS, None]
        if len(rays) < 2:
            continue  # every pair is degenerate, subtending no angle
        iu, ju = np.triu_indices(len(rays), 1)
        min_cos = float(np.clip((rays[iu] * rays[ju]).sum(axis=1).min(), -1.0, 1.0))
        if float(np.degrees(np.arccos(min_cos))) <= config.tri_min_angle_deg:
            continue
        obs = [(int(f), pixels[row].copy()) for row, f in enumerate(frames)]
        landmarks.append(Landmark(id=tid, position=point, observations=obs))
    return landmarks


# ---------------------------------------------------------------------------
# bundle adjustment
# ---------------------------------------------------------------------------

def _huber_cost(e: np.ndarray, delta: float) -> float:
    """0.5 * sum of Huber-robustified squared errors."""
    sq = e * e
    lin = 2.0 * delta * e - delta * delta
    return 0.5 * float(np.where(e <= delta, sq, lin).sum())


def bundle_adjust(model: SceneModel, config: SfmConfig = DEFAULT_SFM_CONFIG) -> SceneModel:
    """Levenberg-Marquardt refinement of poses, landmarks and (optionally) focal.

    The first registered frame is the gauge anchor and stays fixed. Landmark
    blocks are eliminated with a Schur complement; the reduced camera system
    is solved densely. Accepted-step costs decrease monotonically
    (``ba_cost_history``). Raises :class:`Diverged` when no damping retry can
    reduce the cost while the gradient is still significant.
    """
    reg = [(f, p) for f, p in model.trajectory.frames if p is not None]
    if len(reg) < 2:
        raise InvalidInput("bundle adjustment needs >= 2 registered frames")
    frames = [f for f, _ in reg]
    cam_of = {f: i for i, f in enumerate(frames)}
    rmats = np.stack([p.rotation for _, p in reg])
    tvecs = np.stack([p.t for _, p in reg])

    lm_keep = [lm for lm in model.landmarks if sum(1 for f, _ in lm.observations if f in cam_of) >= 2]
    if not lm_keep:
        raise InvalidInput("bundle adjustment needs at least one landmark with 2 observations")
    points = np.stack([lm.position for lm in lm_keep])
    obs_cam, obs_pt, obs_uv = [], [], []
    for li, lm in enumerate(lm_keep):
        for f, px in lm.observations:
            if f in cam_of:
                obs_cam.append(cam_of[f])
                obs_pt.append(li)
                obs_uv.append(px)
    obs_cam = np.asarray(obs_cam, dtype=np.int64)
    obs_pt = np.asarray(obs_pt, dtype=np.int64)
    obs_uv = np.asarray(obs_uv, dtype=np.float64)

    n_cam = len(frames)
    n_pt = len(lm_keep)
    n_obs = len(obs_cam)
    k = model.intrinsics
    refine_focal = config.refine_focal
    focal_scale = 1.0
    n_f = 1 if refine_focal else 0
    d_cam = 6 * (n_cam - 1) + n_f  # anchor camera fixed
    delta_h = config.huber_delta_px

    free_of_cam = np.full(n_cam, -1, dtype=np.int64)
    free_of_cam[1:] = np.arange(n_cam - 1)

    def evaluate(rm, tv, pts, fs, want_jac):
        res, jpose, jpoint, jf, _z = kernels.reproj_residual_jacobian(
            rm, tv, pts, obs_cam, obs_pt, obs_uv,
            k.fx * fs, k.fy * fs, k.cx, k.cy, refine_focal,
        )
        e = np.linalg.norm(res, axis=1)
        cost = _huber_cost(e, delta_h)
        if not want_jac:
            return cost, e
        return cost, e, res, jpose, jpoint, jf

    cost, e_now, res, jpose, jpoint, jf = evaluate(rmats, tvecs, points, focal_scale, True)
    history = [cost]
    lam = config.ba_lambda_init
    converged = False

    for _ in range(config.ba_max_iters):
        w = np.where(e_now <= delta_h, 1.0, delta_h / np.maximum(e_now, 1e-300))
        sw = np.sqrt(w)
        rw = res * sw[:, None]
        jp_w = jpose * sw[:, None, None]
        jx_w = jpoint * sw[:, None, None]
        jf_w = jf * sw[:, None] if refine_focal else None

        # gradient
        g_c = np.zeros(d_cam)
        free_idx = free_of_cam[obs_cam]
        movable = free_idx >= 0
        gc_blocks = np.einsum("nij,ni->nj", jp_w, rw)
        np.add.at(
            g_c,
            (6 * free_idx[movable][:, None] + np.arange(6)[None, :]).ravel(),
            gc_blocks[movable].ravel(),
        )
        if refine_focal:
            g_c[-1] = float((jf_w * rw).sum())
        g_p = np.zeros((n_pt, 3))
        np.add.at(g_p, obs_pt, np.einsum("nij,ni->nj", jx_w, rw))
        g_inf = max(
            float(np.abs(g_c).max()) if d_cam else 0.0,
            float(np.abs(g_p).max()) if n_pt else 0.0,
        )
        if g_inf < config.ba_gradient_tol:
            converged = True
            break

        # normal-equation blocks
        h_cc = np.zeros((d_cam, d_cam))
        hc_blocks = np.einsum("nij,nik->njk", jp_w, jp_w)  # (N,6,6)
        cam_acc = np.zeros((n_cam - 1, 6, 6))
        np.add.at(cam_acc, free_idx[movable], hc_blocks[movable])
        for c in range(n_cam - 1):
            h_cc[6 * c : 6 * c + 6, 6 * c : 6 * c + 6] = cam_acc[c]
        if refine_focal:
            cf_blocks = np.einsum("nij,ni->nj", jp_w, jf_w)  # (N,6)
            cf_acc = np.zeros((n_cam - 1, 6))
            np.add.at(cf_acc, free_idx[movable], cf_blocks[movable])
            h_cc[:-1, -1] = cf_acc.ravel()
            h_cc[-1, :-1] = cf_acc.ravel()
            h_cc[-1, -1] = float((jf_w * jf_w).sum())
        h_pp = np.zeros((n_pt, 3, 3))
        np.add.at(h_pp, obs_pt, np.einsum("nij,nik->njk", jx_w, jx_w))

        # camera-point coupling as dense per-landmark blocks (d_cam x n_pt x 3)
        wp_blocks = np.einsum("nij,nik->njk", jp_w, jx_w)  # (N,6,3)
        w3 = np.zeros((d_cam, n_pt, 3))
        n_mov = int(movable.sum())
        mov_rows = np.broadcast_to(
            (6 * free_idx[movable][:, None, None] + np.arange(6)[None, :, None]), (n_mov, 6, 3)
        )
        mov_pts = np.broadcast_to(obs_pt[movable][:, None, None], (n_mov, 6, 3))
        mov_axes = np.broadcast_to(np.arange(3)[None, None, :], (n_mov, 6, 3))
        np.add.at(w3, (mov_rows, mov_pts, mov_axes), wp_blocks[movable])
        if refine_focal:
            fp_blocks = np.einsum("ni,nik->nk", jf_w, jx_w)  # (N,3)
            np.add.at(
                w3,
                (np.full((n_obs, 3), d_cam - 1), obs_pt[:, None], np.arange(3)[None, :]),
                fp_blocks,
            )
        w2 = w3.reshape(d_cam, 3 * n_pt)

        g_p_flat = g_p.ravel()
        accepted = False
        for _retry in range(config.ba_max_retries + 1):
            h_cc_d = h_cc.copy()
            idx = np.arange(d_cam)
            h_cc_d[idx, idx] += lam * np.maximum(np.abs(h_cc[idx, idx]), 1e-12)
            h_pp_d = h_pp.copy()
            pidx = np.arange(3)
            h_pp_d[:, pidx, pidx] += lam * np.maximum(np.abs(h_pp[:, pidx, pidx]), 1e-12)
            try:
                v_inv = np.linalg.inv(h_pp_d)
            except np.linalg.LinAlgError:
                lam *= config.ba_lambda_up
                continue
            wv2 = np.einsum("rpk,pkm->rpm", w3, v_inv).reshape(d_cam, 3 * n_pt)
            s_mat = h_cc_d - wv2 @ w2.T
            rhs = -g_c + wv2 @ g_p_flat
            try:
                d_c = np.linalg.solve(s_mat, rhs)
            except np.linalg.LinAlgError:
                lam *= config.ba_lambda_up
                continue
            back = (-g_p_flat - w2.T @ d_c).reshape(n_pt, 3)
            d_p = np.einsum("pkm,pm->pk", v_inv, back)
            if not (np.isfinite(d_c).all() and np.isfinite(d_p).all()):
                lam *= config.ba_lambda_up
                continue
            # apply trial step
            rm_t = rmats.copy()
            tv_t = tvecs.copy()
            for c in range(1, n_cam):
                base = 6 * (c - 1)
                rm_t[c] = so3_exp(d_c[base : base + 3]) @ rmats[c]
                tv_t[c] = tvecs[c] + d_c[base + 3 : base + 6]
            pts_t = points + d_p
            fs_t = focal_scale * float(np.exp(d_c[-1])) if refine_focal else focal_scale
            new_cost, new_e = evaluate(rm_t, tv_t, pts_t, fs_t, False)
            if np.isfinite(new_cost) and new_cost < cost:
                rmats, tvecs, points, focal_scale = rm_t, tv_t, pts_t, fs_t
                prev_cost = cost
                cost = new_cost
                history.append(cost)
                lam = max(lam / config.ba_lambda_down, 1e-14)
                accepted = True
                break
            lam *= config.ba_lambda_up
        if not accepted:
            if g_inf < 1e-8 * (1.0 + cost):
                converged = True
                break
            raise Diverged(
                f"no damping retry reduced the cost (gradient inf-norm {g_inf:.3e})"
            )
        cost_, e_now, res, jpose, jpoint, jf = evaluate(rmats, tvecs, points, focal_scale, True)
        if prev_cost - cost <= config.ba_ftol * max(prev_cost, 1e-300):
            converged = True
            break

    _final_cost, e_final = evaluate(rmats, tvecs, points, focal_scale, False)
    mean_reproj = float(e_final.mean())
    max_reproj = float(e_final.max())

    new_frames: list[tuple[int, Pose | None]] = []
    for f, p in model.trajectory.frames:
        if p is None:
            new_frames.append((f, None))
        else:
            c = cam_of[f]
            new_frames.append((f, Pose(matrix_to_quat(rmats[c]), tvecs[c])))
    new_landmarks = [
        Landmark(id=lm.id, position=points[i].copy(), observations=lm.observations)
        for i, lm in enumerate(lm_keep)
    ]
    new_k = k if not refine_focal else Intrinsics(
        fx=k.fx * focal_scale, fy=k.fy * focal_scale, cx=k.cx, cy=k.cy, width=k.width, height=k.height
    )
    return SceneModel(
        trajectory=Trajectory(frames=new_frames, fps=model.trajectory.fps),
        landmarks=new_landmarks,
        intrinsics=new_k,
        mean_reprojection_error=mean_reproj,
        max_reprojection_error=max_reproj,
        status=model.status,
        failure_reason=model.failure_reason,
        ba_cost_history=history,
    )


# ---------------------------------------------------------------------------
# pipeline driver
# ---------------------------------------------------------------------------

def run_pipeline(
    tracklets: list[Tracklet],
    masks: dict[int, DynamicMask] | None,
    k: Intrinsics,
    config: SfmConfig = DEFAULT_SFM_CONFIG,
    seed: int = 0,
    fps: float = 12.0,
    num_frames: int | None = None,
) -> SceneModel:
    """Masked correspondences → view graph → averaging → triangulation → BA.

    Never raises for pipeline-level failures: the returned model carries
    status "failed" + reason, with whatever partial trajectory exists. A run
    registering < 80% of frames is failed by definition. Failures are retried
    with derived seeds up to ``retry_attempts`` times.
    """
    if not tracklets:
        return _failed_model(k, fps, num_frames or 0, "no tracklets supplied")
    total = num_frames if num_frames is not None else max(tr.end_frame for tr in tracklets) + 1
    corr = extract_correspondences(tracklets, masks)
    last_reason = "unknown"
    last_model: SceneModel | None = None
    for attempt in range(max(1, config.retry_attempts)):
        attempt_seed = int(np.random.SeedSequence(entropy=(seed, attempt)).generate_state(1)[0])
        try:
            model = _run_once(corr, k, config, attempt_seed, fps, total)
        except (EmptyGraph, InsufficientParallax, NoConsensus, TooFewMatches, Diverged, InvalidInput) as exc:
            last_reason = f"{type(exc).__name__}: {exc}"
            continue
        if model.failed:
            last_model = model
            last_reason = model.failure_reason or "unknown"
            continue
        if model.trajectory.registered_fraction < config.registered_min_fraction:
            model.status = "failed"
            model.failure_reason = (
                f"registered fraction {model.trajectory.registered_fraction:.3f} "
                f"below {config.registered_min_fraction:.2f}"
            )
            last_model = model
            last_reason = model.failure_reason
            continue
        return model
    if last_model is not None:
        return last_model
    return _failed_model(k, fps, total, last_reason)


def _failed_model(k: Intrinsics, fps: float, total: int, reason: str) -> SceneModel:
    traj = Trajectory(frames=[(f, None) for f in range(total)], fps=fps)
    return SceneModel(
        trajectory=traj,
        landmarks=[],
        intrinsics=k,
        mean_reprojection_error=float("inf"),
        status="failed",
        failure_reason=reason,
    )


def _run_once(
    corr: CorrespondenceSet,
    k: Intrinsics,
    config: SfmConfig,
    seed: int,
    fps: float,
    total: int,
) -> SceneModel:
    graph = build_view_graph(corr, k, config.min_matches, seed, config)
    rotations = rotation_averaging(graph, config)
    positions = position_averaging(graph, rotations, config)
    poses = {
        f: Pose(matrix_to_quat(rotations[f]), -rotations[f] @ c)
        for f, c in positions.centers.items()
    }
    # averaging leaves pose errors worth a few pixels, so a first pass runs
    # with a widened gate; each BA pass then re-selects landmarks under the
    # strict gate until the surviving track set stops changing — tracks the
    # rough initial poses rejected come back once the poses tighten
    strict = config.tri_max_reproj_px
    track_obs = _collect_track_observations(corr, poses)
    n_tracks = len(track_obs)
    min_lms = max(8, min(config.tri_min_landmarks, n_tracks // 2))
    gate = strict * max(config.tri_bootstrap_factor, 1.0)
    model = None
    cur_k = k
    prev_ids: set[int] | None = None
    for _ in range(3):
        landmarks = triangulate_landmarks(
            corr, poses, cur_k, config, max_reproj_px=gate, track_obs=track_obs
        )
        while len(landmarks) < min_lms and gate <= 64.0 * strict:
            gate *= 2.0
            landmarks = triangulate_landmarks(
                corr, poses, cur_k, config, max_reproj_px=gate, track_obs=track_obs
            )
        if not landmarks:
            raise InvalidInput("no landmark survived triangulation filtering")
        ids = {lm.id for lm in landmarks}
        if prev_ids is not None and ids == prev_ids:
            break  # triangulation is a fixed point of the refined poses
        prev_ids = ids
        frames = [(f, poses.get(f)) for f in range(total)]
        model = SceneModel(
            trajectory=Trajectory(frames=frames, fps=fps),
            landmarks=landmarks,
            intrinsics=cur_k,
        )
        model = bundle_adjust(model, config)
        poses = {f: p for f, p in model.trajectory.frames if p is not None}
        cur_k = model.intrinsics
        gate = strict  # refined poses feed a strict-gate re-triangulation
    if len(model.landmarks) < min_lms:
        model.status = "failed"
        model.failure_reason = (
            f"only {len(model.landmarks)} landmarks survived "
            f"(minimum {min_lms})"
        )
    return model


def quality_filter(
    models: list[SceneModel],
    reproj_threshold: float,
    require_full_registration: bool = False,
) -> list[SceneModel]:
    """Keep models whose mean reprojection error clears the quality bar."""
    out = []
    for m in models:
        if m.failed or not np.isfinite(m.mean_reprojection_error):
            continue
        if m.mean_reprojection_error >= reproj_threshold:
            continue
        if require_full_registration and m.trajectory.registered_fraction < 1.0:
            continue
        out.append(m)
    return out
