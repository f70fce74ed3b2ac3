"""Pure-numpy implementations of the hot kernels.

Mirrors ``_kernels.pyx`` exactly; selected when the compiled extension is
unavailable or ``DYNSFM_PURE_PYTHON=1`` is set.
"""

from __future__ import annotations

import numpy as np

BACKEND = "numpy"

_DEN_EPS = 1e-18


def sampson_batch(f: np.ndarray, pts1: np.ndarray, pts2: np.ndarray) -> np.ndarray:
    """Squared Sampson error for N pixel correspondences.

    A vanishing denominator yields 0 when the algebraic residual also
    vanishes and +inf otherwise (callers treat +inf as a hard outlier).
    """
    f = np.ascontiguousarray(f, dtype=np.float64)
    p1 = np.ascontiguousarray(pts1, dtype=np.float64)
    p2 = np.ascontiguousarray(pts2, dtype=np.float64)
    fx1 = p1 @ f[:, :2].T + f[:, 2]  # rows: F @ [x1, y1, 1]
    ftx2 = p2 @ f[:2, :] + f[2, :]  # rows: F.T @ [x2, y2, 1]
    num = (ftx2[:, 0] * p1[:, 0] + ftx2[:, 1] * p1[:, 1] + ftx2[:, 2]) ** 2
    den = fx1[:, 0] ** 2 + fx1[:, 1] ** 2 + ftx2[:, 0] ** 2 + ftx2[:, 1] ** 2
    out = np.empty(len(p1), dtype=np.float64)
    bad = den < _DEN_EPS
    good = ~bad
    out[good] = num[good] / den[good]
    out[bad] = np.where(num[bad] < _DEN_EPS, 0.0, np.inf)
    return out


def sampson_multi(fs: np.ndarray, pts1: np.ndarray, pts2: np.ndarray) -> np.ndarray:
    """Squared Sampson error for B fundamental matrices over N shared points.

    Returns a (B, N) array; per-point semantics match ``sampson_batch``.
    """
    fm = np.ascontiguousarray(fs, dtype=np.float64)
    p1 = np.ascontiguousarray(pts1, dtype=np.float64)
    p2 = np.ascontiguousarray(pts2, dtype=np.float64)
    h1 = np.concatenate([p1, np.ones((len(p1), 1))], axis=1)
    h2 = np.concatenate([p2, np.ones((len(p2), 1))], axis=1)
    fx1 = np.einsum("bij,nj->bni", fm, h1)
    ftx2 = np.einsum("bji,nj->bni", fm, h2)
    num = np.einsum("bni,ni->bn", fx1, h2) ** 2
    den = fx1[:, :, 0] ** 2 + fx1[:, :, 1] ** 2 + ftx2[:, :, 0] ** 2 + ftx2[:, :, 1] ** 2
    out = np.empty(den.shape, dtype=np.float64)
    bad = den < _DEN_EPS
    good = ~bad
    out[good] = num[good] / den[good]
    out[bad] = np.where(num[bad] < _DEN_EPS, 0.0, np.inf)
    return out


def sampson_flow_map(f: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Per-pixel squared Sampson error of a dense flow field (H,W,2) -> (H,W)."""
    f = np.asarray(f, dtype=np.float64)
    flow = np.asarray(flow, dtype=np.float64)
    h, w = flow.shape[:2]
    xs = np.arange(w, dtype=np.float64)[None, :].repeat(h, axis=0)
    ys = np.arange(h, dtype=np.float64)[:, None].repeat(w, axis=1)
    x2 = xs + flow[:, :, 0]
    y2 = ys + flow[:, :, 1]
    fx1_0 = f[0, 0] * xs + f[0, 1] * ys + f[0, 2]
    fx1_1 = f[1, 0] * xs + f[1, 1] * ys + f[1, 2]
    fx1_2 = f[2, 0] * xs + f[2, 1] * ys + f[2, 2]
    ftx2_0 = f[0, 0] * x2 + f[1, 0] * y2 + f[2, 0]
    ftx2_1 = f[0, 1] * x2 + f[1, 1] * y2 + f[2, 1]
    num = (x2 * fx1_0 + y2 * fx1_1 + fx1_2) ** 2
    den = fx1_0 ** 2 + fx1_1 ** 2 + ftx2_0 ** 2 + ftx2_1 ** 2
    out = np.empty((h, w), dtype=np.float64)
    bad = den < _DEN_EPS
    good = ~bad
    out[good] = num[good] / den[good]
    out[bad] = np.where(num[bad] < _DEN_EPS, 0.0, np.inf)
    return out


def project_batch(
    rmats: np.ndarray,
    tvecs: np.ndarray,
    points: np.ndarray,
    cam_idx: np.ndarray,
    pt_idx: np.ndarray,
    fx: float,
    fy: float,
    cx: float,
    cy: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Project selected (camera, point) pairs; returns (pixels (N,2), depths (N,))."""
    r = np.asarray(rmats, dtype=np.float64)[cam_idx]
    t = np.asarray(tvecs, dtype=np.float64)[cam_idx]
    x = np.asarray(points, dtype=np.float64)[pt_idx]
    xc = np.einsum("nij,nj->ni", r, x) + t
    z = xc[:, 2]
    iz = 1.0 / _safe_z(z)
    uv = np.stack([fx * xc[:, 0] * iz + cx, fy * xc[:, 1] * iz + cy], axis=1)
    return uv, z


def reproj_residual_jacobian(
    rmats: np.ndarray,
    tvecs: np.ndarray,
    points: np.ndarray,
    cam_idx: np.ndarray,
    pt_idx: np.ndarray,
    obs: np.ndarray,
    fx: float,
    fy: float,
    cx: float,
    cy: float,
    want_focal: bool,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray | None, np.ndarray]:
    """Reprojection residuals plus analytic Jacobians for bundle adjustment.

    Residual is prediction − observation. Pose Jacobian is taken w.r.t. a
    left-multiplicative so(3) perturbation of R followed by the translation:
    parameters ordered ``[ω_x, ω_y, ω_z, t_x, t_y, t_z]``. The focal Jacobian
    is w.r.t. a common multiplicative scale on (fx, fy).
    """
    r = np.asarray(rmats, dtype=np.float64)[cam_idx]
    t = np.asarray(tvecs, dtype=np.float64)[cam_idx]
    x = np.asarray(points, dtype=np.float64)[pt_idx]
    obs = np.asarray(obs, dtype=np.float64)
    n = len(cam_idx)

    rx = np.einsum("nij,nj->ni", r, x)
    xc = rx + t
    z = xc[:, 2]
    iz = 1.0 / _safe_z(z)
    u = fx * xc[:, 0] * iz + cx
    v = fy * xc[:, 1] * iz + cy
    res = np.stack([u, v], axis=1) - obs

    a = np.zeros((n, 2, 3), dtype=np.float64)
    a[:, 0, 0] = fx * iz
    a[:, 0, 2] = -fx * xc[:, 0] * iz * iz
    a[:, 1, 1] = fy * iz
    a[:, 1, 2] = -fy * xc[:, 1] * iz * iz

    # dXc/dω = -[R x]×  (left perturbation R ← Exp(ω) R)
    sk = np.zeros((n, 3, 3), dtype=np.float64)
    sk[:, 0, 1] = -rx[:, 2]
    sk[:, 0, 2] = rx[:, 1]
    sk[:, 1, 0] = rx[:, 2]
    sk[:, 1, 2] = -rx[:, 0]
    sk[:, 2, 0] = -rx[:, 1]
    sk[:, 2, 1] = rx[:, 0]

    j_pose = np.empty((n, 2, 6), dtype=np.float64)
    j_pose[:, :, :3] = -np.einsum("nij,njk->nik", a, sk)
    j_pose[:, :, 3:] = a
    j_point = np.einsum("nij,njk->nik", a, r)
    j_focal = None
    if want_focal:
        j_focal = np.stack([fx * xc[:, 0] * iz, fy * xc[:, 1] * iz], axis=1)
    return res, j_pose, j_point, j_focal, z


def _safe_z(z: np.ndarray) -> np.ndarray:
    # sign-preserving clamp keeps LM steps finite when a point crosses z=0
    s = np.where(z >= 0.0, 1.0, -1.0)
    return np.where(np.abs(z) < 1e-12, s * 1e-12, z)
