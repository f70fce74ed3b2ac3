"""Core camera geometry: poses, intrinsics, epipolar algebra, alignment.

Conventions used throughout the package:

* Poses are world-to-camera: ``x_cam = R @ x_world + t``.
* Rotations are stored as unit quaternions ``(qx, qy, qz, qw)`` with the
  scalar part kept non-negative so every rotation has one canonical form.
* The camera center in world coordinates is ``c = -R.T @ t``.
* Image points are pixel coordinates ``(x, y)`` with x along the width.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    Degenerate,
    DegenerateGeometry,
    DimensionMismatch,
    DivisionDegenerate,
    InsufficientPoints,
    InvalidInput,
    ZeroBaseline,
)

_EPS = 1e-12


# ---------------------------------------------------------------------------
# quaternion helpers
# ---------------------------------------------------------------------------

def quat_normalize(q: np.ndarray) -> np.ndarray:
    """Return the unit quaternion with non-negative scalar part (qx,qy,qz,qw)."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (4,):
        raise InvalidInput(f"quaternion must have shape (4,), got {q.shape}")
    n = float(np.linalg.norm(q))
    if n < _EPS:
        raise InvalidInput("zero-norm quaternion")
    q = q / n
    if q[3] < 0.0:
        q = -q
    return q


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    x, y, z, w = quat_normalize(q)
    return np.array(
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
            [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
            [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(r: np.ndarray) -> np.ndarray:
    """Convert a rotation matrix to the canonical quaternion (Shepperd's method)."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3):
        raise InvalidInput(f"rotation matrix must be 3x3, got {r.shape}")
    t = np.trace(r)
    if t > 0.0:
        s = np.sqrt(t + 1.0) * 2.0
        w = 0.25 * s
        x = (r[2, 1] - r[1, 2]) / s
        y = (r[0, 2] - r[2, 0]) / s
        z = (r[1, 0] - r[0, 1]) / s
    elif r[0, 0] >= r[1, 1] and r[0, 0] >= r[2, 2]:
        s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        w = (r[2, 1] - r[1, 2]) / s
        x = 0.25 * s
        y = (r[0, 1] + r[1, 0]) / s
        z = (r[0, 2] + r[2, 0]) / s
    elif r[1, 1] > r[2, 2]:
        s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
        w = (r[0, 2] - r[2, 0]) / s
        x = (r[0, 1] + r[1, 0]) / s
        y = 0.25 * s
        z = (r[1, 2] + r[2, 1]) / s
    else:
        s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
        w = (r[1, 0] - r[0, 1]) / s
        x = (r[0, 2] + r[2, 0]) / s
        y = (r[1, 2] + r[2, 1]) / s
        z = 0.25 * s
    return quat_normalize(np.array([x, y, z, w]))


def so3_exp(omega: np.ndarray) -> np.ndarray:
    """Rotation matrix for an axis-angle vector (Rodrigues)."""
    omega = np.asarray(omega, dtype=np.float64)
    theta = float(np.linalg.norm(omega))
    k = skew(omega)
    if theta < 1e-10:
        # second-order series keeps derivative tests exact near zero
        return np.eye(3) + k + 0.5 * (k @ k)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * k + b * (k @ k)


def so3_log(r: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation matrix; inverse of :func:`so3_exp`."""
    r = np.asarray(r, dtype=np.float64)
    cos_theta = np.clip((np.trace(r) - 1.0) * 0.5, -1.0, 1.0)
    theta = float(np.arccos(cos_theta))
    v = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if theta < 1e-10:
        return 0.5 * v
    if theta > np.pi - 1e-6:
        # near pi the antisymmetric part degenerates; recover axis from R + I
        m = (r + np.eye(3)) * 0.5
        axis_sq = np.clip(np.diag(m), 0.0, None)
        axis = np.sqrt(axis_sq)
        # fix signs using the largest component
        i = int(np.argmax(axis))
        if axis[i] < _EPS:
            return np.zeros(3)
        axis[(i + 1) % 3] = m[i, (i + 1) % 3] / axis[i]
        axis[(i + 2) % 3] = m[i, (i + 2) % 3] / axis[i]
        axis = axis / max(np.linalg.norm(axis), _EPS)
        if np.dot(axis, v) < 0.0:
            axis = -axis
        return axis * theta
    return v * (theta / (2.0 * np.sin(theta)))


def skew(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def rotation_angle_deg(ra: np.ndarray, rb: np.ndarray) -> float:
    """Geodesic angle between two rotations, in degrees."""
    r = np.asarray(ra, dtype=np.float64) @ np.asarray(rb, dtype=np.float64).T
    cos_theta = np.clip((np.trace(r) - 1.0) * 0.5, -1.0, 1.0)
    return float(np.degrees(np.arccos(cos_theta)))


# ---------------------------------------------------------------------------
# pose / intrinsics / trajectory
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Pose:
    """World-to-camera rigid transform stored as quaternion + translation."""

    quat: np.ndarray  # (4,) qx qy qz qw, unit, qw >= 0
    t: np.ndarray  # (3,)

    def __post_init__(self):
        object.__setattr__(self, "quat", quat_normalize(self.quat))
        t = np.asarray(self.t, dtype=np.float64)
        if t.shape != (3,):
            raise InvalidInput(f"translation must have shape (3,), got {t.shape}")
        object.__setattr__(self, "t", t.copy())

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.array([0.0, 0.0, 0.0, 1.0]), np.zeros(3))

    @staticmethod
    def from_rt(r: np.ndarray, t: np.ndarray) -> "Pose":
        return Pose(matrix_to_quat(r), np.asarray(t, dtype=np.float64))

    @property
    def rotation(self) -> np.ndarray:
        cached = self.__dict__.get("_rot")
        if cached is None:
            cached = quat_to_matrix(self.quat)
            object.__setattr__(self, "_rot", cached)
        return cached

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates, ``-R.T @ t``."""
        cached = self.__dict__.get("_center")
        if cached is None:
            cached = -self.rotation.T @ self.t
            object.__setattr__(self, "_center", cached)
        return cached

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Map world points (..., 3) into the camera frame."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.t

    def compose(self, inner: "Pose") -> "Pose":
        """Transform applying ``inner`` first, then this pose."""
        r = self.rotation @ inner.rotation
        t = self.rotation @ inner.t + self.t
        return Pose(matrix_to_quat(r), t)

    def inverse(self) -> "Pose":
        r = self.rotation
        return Pose(matrix_to_quat(r.T), -r.T @ self.t)

    def almost_equal(self, other: "Pose", atol: float = 1e-9) -> bool:
        dq = min(np.linalg.norm(self.quat - other.quat), np.linalg.norm(self.quat + other.quat))
        return bool(dq <= atol and np.allclose(self.t, other.t, atol=atol, rtol=0.0))


def relative_pose(a: Pose, b: Pose) -> Pose:
    """Pose mapping camera-a coordinates to camera-b: ``b ∘ a⁻¹``.

    Satisfies ``relative_pose(a, b).compose(a) == b`` exactly up to rounding.
    """
    return b.compose(a.inverse())


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics; no skew, square pixels not assumed."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidInput("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise InvalidInput("image dimensions must be positive")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [
                [self.fx, 0.0, self.cx],
                [0.0, self.fy, self.cy],
                [0.0, 0.0, 1.0],
            ]
        )

    @property
    def inverse_matrix(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    def project(self, cam_points: np.ndarray) -> np.ndarray:
        """Project camera-frame points (..., 3) to pixels (..., 2)."""
        pts = np.asarray(cam_points, dtype=np.float64)
        z = pts[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * pts[..., 0] / z + self.cx
            v = self.fy * pts[..., 1] / z + self.cy
        return np.stack([u, v], axis=-1)

    def scaled(self, factor_x: float, factor_y: float) -> "Intrinsics":
        return Intrinsics(
            fx=self.fx * factor_x,
            fy=self.fy * factor_y,
            cx=self.cx * factor_x,
            cy=self.cy * factor_y,
            width=int(round(self.width * factor_x)),
            height=int(round(self.height * factor_y)),
        )


@dataclass
class Trajectory:
    """Per-frame camera poses; ``None`` marks an unregistered frame."""

    frames: list[tuple[int, Pose | None]] = field(default_factory=list)
    fps: float = 12.0

    def __post_init__(self):
        ids = [f for f, _ in self.frames]
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise InvalidInput("frame indices must be strictly increasing")
        if self.fps <= 0:
            raise InvalidInput("fps must be positive")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def frame_ids(self) -> list[int]:
        return [f for f, _ in self.frames]

    @property
    def registered(self) -> list[tuple[int, Pose]]:
        return [(f, p) for f, p in self.frames if p is not None]

    @property
    def registered_fraction(self) -> float:
        if not self.frames:
            return 0.0
        return sum(1 for _, p in self.frames if p is not None) / len(self.frames)

    def pose(self, frame: int) -> Pose | None:
        for f, p in self.frames:
            if f == frame:
                return p
        raise InvalidInput(f"frame {frame} not in trajectory")

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """(frame_ids (N,), camera centers (N,3)) over registered frames."""
        reg = self.registered
        if not reg:
            return np.zeros(0, dtype=np.int64), np.zeros((0, 3))
        ids = np.array([f for f, _ in reg], dtype=np.int64)
        ctr = np.stack([p.center for _, p in reg])
        return ids, ctr


# ---------------------------------------------------------------------------
# epipolar geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FundamentalMatrix:
    """Rank-2 fundamental matrix normalized to unit max-absolute entry."""

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64)
        if m.shape != (3, 3):
            raise InvalidInput(f"fundamental matrix must be 3x3, got {m.shape}")
        peak = float(np.abs(m).max())
        if peak < _EPS:
            raise InvalidInput("fundamental matrix is numerically zero")
        object.__setattr__(self, "m", m / peak)

    @property
    def transposed(self) -> "FundamentalMatrix":
        return FundamentalMatrix(self.m.T)


def enforce_rank2(m: np.ndarray) -> np.ndarray:
    """Project a 3x3 matrix to the nearest rank-2 matrix (zero smallest singular value)."""
    u, s, vt = np.linalg.svd(np.asarray(m, dtype=np.float64))
    s = s.copy()
    s[2] = 0.0
    return (u * s) @ vt


def fundamental_from_relpose(k1: Intrinsics, k2: Intrinsics, rel: Pose) -> FundamentalMatrix:
    """F mapping image-1 points to epipolar lines in image 2, ``K2⁻ᵀ [t]× R K1⁻¹``.

    ``rel`` is the camera-1-to-camera-2 transform. Raises
    :class:`Degenerate` when the relative translation vanishes (no epipolar
    constraint exists for pure rotation); callers fall back to point distance.
    """
    t = rel.t
    if float(np.linalg.norm(t)) < 1e-12:
        raise Degenerate("relative translation is zero; fundamental matrix undefined")
    e = skew(t) @ rel.rotation
    f = k2.inverse_matrix.T @ e @ k1.inverse_matrix
    return FundamentalMatrix(f)


def sampson_error(f: FundamentalMatrix | np.ndarray, p1: np.ndarray, p2: np.ndarray) -> float:
    """First-order geometric (Sampson) error of a single correspondence.

    Returns the squared-distance quantity
    ``(p2ᵀ F p1)² / ((F p1)₀² + (F p1)₁² + (Fᵀ p2)₀² + (Fᵀ p2)₁²)``.
    Raises :class:`DivisionDegenerate` when the denominator vanishes.
    """
    m = f.m if isinstance(f, FundamentalMatrix) else np.asarray(f, dtype=np.float64)
    x1 = np.array([p1[0], p1[1], 1.0], dtype=np.float64)
    x2 = np.array([p2[0], p2[1], 1.0], dtype=np.float64)
    fx1 = m @ x1
    ftx2 = m.T @ x2
    num = float(x2 @ fx1) ** 2
    den = float(fx1[0] ** 2 + fx1[1] ** 2 + ftx2[0] ** 2 + ftx2[1] ** 2)
    if den < 1e-18:
        raise DivisionDegenerate("sampson denominator vanished (point at epipole or zero F rows)")
    return num / den


# ---------------------------------------------------------------------------
# triangulation
# ---------------------------------------------------------------------------

def triangulate(
    pose1: Pose,
    pose2: Pose,
    k: Intrinsics,
    p1: np.ndarray,
    p2: np.ndarray,
) -> tuple[np.ndarray, bool]:
    """Two-view DLT triangulation of one pixel correspondence.

    Returns (world point (3,), cheirality flag: positive depth in both views).
    Raises :class:`ZeroBaseline` when the camera centers coincide.
    """
    if float(np.linalg.norm(pose1.center - pose2.center)) < 1e-12:
        raise ZeroBaseline("camera centers coincide; correspondence carries no depth")
    pts, in_front = triangulate_nview([pose1, pose2], k, np.array([p1, p2], dtype=np.float64))
    return pts, in_front


def triangulate_nview(
    poses: Sequence[Pose],
    k: Intrinsics,
    pixels: np.ndarray,
) -> tuple[np.ndarray, bool]:
    """N-view DLT; ``pixels`` is (n_views, 2). Returns (point, all-depths-positive)."""
    pixels = np.asarray(pixels, dtype=np.float64)
    if len(poses) < 2 or pixels.shape != (len(poses), 2):
        raise InvalidInput("need >= 2 views with one pixel each")
    km = k.matrix
    rows = []
    mats = []
    for pose, px in zip(poses, pixels):
        p = km @ np.hstack([pose.rotation, pose.t[:, None]])
        mats.append(p)
        rows.append(px[0] * p[2] - p[0])
        rows.append(px[1] * p[2] - p[1])
    a = np.stack(rows)
    _, _, vt = np.linalg.svd(a)
    xh = vt[-1]
    if abs(xh[3]) < 1e-14:
        # point at infinity; report with failed cheirality
        return xh[:3].copy(), False
    x = xh[:3] / xh[3]
    in_front = True
    for pose in poses:
        z = float(pose.rotation[2] @ x + pose.t[2])
        if z <= 0.0:
            in_front = False
            break
    return x, in_front


def triangulation_angle_deg(pose1: Pose, pose2: Pose, point: np.ndarray) -> float:
    """Angle at the triangulated point subtended by the two camera centers."""
    d1 = pose1.center - point
    d2 = pose2.center - point
    n1 = np.linalg.norm(d1)
    n2 = np.linalg.norm(d2)
    if n1 < _EPS or n2 < _EPS:
        return 0.0
    c = np.clip(float(d1 @ d2) / (n1 * n2), -1.0, 1.0)
    return float(np.degrees(np.arccos(c)))


# ---------------------------------------------------------------------------
# similarity alignment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Similarity:
    """Similarity transform ``x -> scale * R @ x + t``."""

    scale: float
    rotation: np.ndarray  # (3,3)
    translation: np.ndarray  # (3,)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return self.scale * (pts @ self.rotation.T) + self.translation


def umeyama_points(src: np.ndarray, dst: np.ndarray, with_scale: bool = True) -> Similarity:
    """Least-squares similarity aligning ``src`` onto ``dst`` (both (N,3)).

    Closed-form solution minimizing ``sum ||dst_i - (s R src_i + t)||²`` with
    proper-rotation enforcement (determinant +1). Raises
    :class:`InsufficientPoints` below 3 pairs and
    :class:`DegenerateGeometry` when the pairs are collinear (the rotation
    about the line is unconstrained).
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.ndim != 2 or src.shape[1] != 3 or src.shape != dst.shape:
        raise DimensionMismatch(f"point sets must both be (N,3), got {src.shape} vs {dst.shape}")
    n = src.shape[0]
    if n < 3:
        raise InsufficientPoints(f"similarity alignment needs >= 3 point pairs, got {n}")
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    xs = src - mu_s
    xd = dst - mu_d
    src_sv = np.linalg.svd(xs, compute_uv=False)
    if src_sv[0] < _EPS or src_sv[1] < 1e-9 * src_sv[0]:
        raise DegenerateGeometry("point pairs are collinear; rotation about the line is free")
    cov = xd.T @ xs / n
    u, d, vt = np.linalg.svd(cov)
    s_fix = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0.0:
        s_fix[2, 2] = -1.0
    r = u @ s_fix @ vt
    if with_scale:
        var_s = float((xs ** 2).sum()) / n
        scale = float(np.trace(np.diag(d) @ s_fix)) / var_s
    else:
        scale = 1.0
    t = mu_d - scale * (r @ mu_s)
    return Similarity(scale=scale, rotation=r, translation=t)


def umeyama_align(src: "Trajectory", dst: "Trajectory", with_scale: bool = True) -> Similarity:
    """Similarity aligning the camera centers of ``src`` onto ``dst``.

    Only frames registered in both trajectories participate. Raises
    :class:`InsufficientPoints` (<3 shared frames) or
    :class:`DegenerateGeometry` (collinear centers).
    """
    src_poses = {f: p for f, p in src.registered}
    dst_poses = {f: p for f, p in dst.registered}
    shared = sorted(src_poses.keys() & dst_poses.keys())
    if len(shared) < 3:
        raise InsufficientPoints(f"only {len(shared)} mutually registered frames; need >= 3")
    a = np.stack([src_poses[f].center for f in shared])
    b = np.stack([dst_poses[f].center for f in shared])
    return umeyama_points(a, b, with_scale=with_scale)
