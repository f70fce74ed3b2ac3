# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels; semantics identical to ``_kernels_py``."""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()

BACKEND = "cython"

cdef double _DEN_EPS = 1e-18


cdef inline double _safe_z(double z) nogil:
    if z >= 0.0:
        if z < 1e-12:
            return 1e-12
        return z
    if z > -1e-12:
        return -1e-12
    return z


def sampson_batch(f, pts1, pts2):
    """Squared Sampson error for N pixel correspondences (see numpy twin)."""
    cdef double[:, ::1] fm = np.ascontiguousarray(f, dtype=np.float64)
    cdef double[:, ::1] p1 = np.ascontiguousarray(pts1, dtype=np.float64)
    cdef double[:, ::1] p2 = np.ascontiguousarray(pts2, dtype=np.float64)
    cdef Py_ssize_t n = p1.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i
    cdef double x1, y1, x2, y2, fx0, fx1, fx2, ft0, ft1, ft2, num, den
    with nogil:
        for i in range(n):
            x1 = p1[i, 0]; y1 = p1[i, 1]
            x2 = p2[i, 0]; y2 = p2[i, 1]
            fx0 = fm[0, 0] * x1 + fm[0, 1] * y1 + fm[0, 2]
            fx1 = fm[1, 0] * x1 + fm[1, 1] * y1 + fm[1, 2]
            fx2 = fm[2, 0] * x1 + fm[2, 1] * y1 + fm[2, 2]
            ft0 = fm[0, 0] * x2 + fm[1, 0] * y2 + fm[2, 0]
            ft1 = fm[0, 1] * x2 + fm[1, 1] * y2 + fm[2, 1]
            num = x2 * fx0 + y2 * fx1 + fx2
            num = num * num
            den = fx0 * fx0 + fx1 * fx1 + ft0 * ft0 + ft1 * ft1
            if den < _DEN_EPS:
                out[i] = 0.0 if num < _DEN_EPS else INFINITY
            else:
                out[i] = num / den
    return out_arr


def sampson_multi(fs, pts1, pts2):
    """Squared Sampson error for B fundamental matrices over N shared points.

    Returns a (B, N) array; per-point semantics match ``sampson_batch``.
    """
    cdef double[:, :, ::1] fm = np.ascontiguousarray(fs, dtype=np.float64)
    cdef double[:, ::1] p1 = np.ascontiguousarray(pts1, dtype=np.float64)
    cdef double[:, ::1] p2 = np.ascontiguousarray(pts2, dtype=np.float64)
    cdef Py_ssize_t b = fm.shape[0]
    cdef Py_ssize_t n = p1.shape[0]
    out_arr = np.empty((b, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t m, i
    cdef double f00, f01, f02, f10, f11, f12, f20, f21, f22
    cdef double x1, y1, x2, y2, fx0, fx1, fx2, ft0, ft1, num, den
    with nogil:
        for m in range(b):
            f00 = fm[m, 0, 0]; f01 = fm[m, 0, 1]; f02 = fm[m, 0, 2]
            f10 = fm[m, 1, 0]; f11 = fm[m, 1, 1]; f12 = fm[m, 1, 2]
            f20 = fm[m, 2, 0]; f21 = fm[m, 2, 1]; f22 = fm[m, 2, 2]
            for i in range(n):
                x1 = p1[i, 0]; y1 = p1[i, 1]
                x2 = p2[i, 0]; y2 = p2[i, 1]
                fx0 = f00 * x1 + f01 * y1 + f02
                fx1 = f10 * x1 + f11 * y1 + f12
                fx2 = f20 * x1 + f21 * y1 + f22
                ft0 = f00 * x2 + f10 * y2 + f20
                ft1 = f01 * x2 + f11 * y2 + f21
                num = x2 * fx0 + y2 * fx1 + fx2
                num = num * num
                den = fx0 * fx0 + fx1 * fx1 + ft0 * ft0 + ft1 * ft1
                if den < _DEN_EPS:
                    out[m, i] = 0.0 if num < _DEN_EPS else INFINITY
                else:
                    out[m, i] = num / den
    return out_arr


def sampson_flow_map(f, flow):
    """Per-pixel squared Sampson error of a dense flow field (H,W,2) -> (H,W)."""
    cdef double[:, ::1] fm = np.ascontiguousarray(f, dtype=np.float64)
    cdef double[:, :, ::1] fl = np.ascontiguousarray(flow, dtype=np.float64)
    cdef Py_ssize_t h = fl.shape[0]
    cdef Py_ssize_t w = fl.shape[1]
    out_arr = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double x1, y1, x2, y2, fx0, fx1, fx2, ft0, ft1, num, den
    with nogil:
        for i in range(h):
            for j in range(w):
                x1 = <double> j
                y1 = <double> i
                x2 = x1 + fl[i, j, 0]
                y2 = y1 + fl[i, j, 1]
                fx0 = fm[0, 0] * x1 + fm[0, 1] * y1 + fm[0, 2]
                fx1 = fm[1, 0] * x1 + fm[1, 1] * y1 + fm[1, 2]
                fx2 = fm[2, 0] * x1 + fm[2, 1] * y1 + fm[2, 2]
                ft0 = fm[0, 0] * x2 + fm[1, 0] * y2 + fm[2, 0]
                ft1 = fm[0, 1] * x2 + fm[1, 1] * y2 + fm[2, 1]
                num = x2 * fx0 + y2 * fx1 + fx2
                num = num * num
                den = fx0 * fx0 + fx1 * fx1 + ft0 * ft0 + ft1 * ft1
                if den < _DEN_EPS:
                    out[i, j] = 0.0 if num < _DEN_EPS else INFINITY
                else:
                    out[i, j] = num / den
    return out_arr


def project_batch(rmats, tvecs, points, cam_idx, pt_idx, double fx, double fy, double cx, double cy):
    """Project selected (camera, point) pairs; returns (pixels (N,2), depths (N,))."""
    cdef double[:, :, ::1] r = np.ascontiguousarray(rmats, dtype=np.float64)
    cdef double[:, ::1] t = np.ascontiguousarray(tvecs, dtype=np.float64)
    cdef double[:, ::1] x = np.ascontiguousarray(points, dtype=np.float64)
    cdef long long[::1] ci = np.ascontiguousarray(cam_idx, dtype=np.int64)
    cdef long long[::1] pi = np.ascontiguousarray(pt_idx, dtype=np.int64)
    cdef Py_ssize_t n = ci.shape[0]
    uv_arr = np.empty((n, 2), dtype=np.float64)
    z_arr = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] uv = uv_arr
    cdef double[::1] zv = z_arr
    cdef Py_ssize_t k, c, p
    cdef double xc0, xc1, xc2, iz
    with nogil:
        for k in range(n):
            c = <Py_ssize_t> ci[k]
            p = <Py_ssize_t> pi[k]
            xc0 = r[c, 0, 0] * x[p, 0] + r[c, 0, 1] * x[p, 1] + r[c, 0, 2] * x[p, 2] + t[c, 0]
            xc1 = r[c, 1, 0] * x[p, 0] + r[c, 1, 1] * x[p, 1] + r[c, 1, 2] * x[p, 2] + t[c, 1]
            xc2 = r[c, 2, 0] * x[p, 0] + r[c, 2, 1] * x[p, 1] + r[c, 2, 2] * x[p, 2] + t[c, 2]
            zv[k] = xc2
            iz = 1.0 / _safe_z(xc2)
            uv[k, 0] = fx * xc0 * iz + cx
            uv[k, 1] = fy * xc1 * iz + cy
    return uv_arr, z_arr


def reproj_residual_jacobian(rmats, tvecs, points, cam_idx, pt_idx, obs,
                             double fx, double fy, double cx, double cy, bint want_focal):
    """Reprojection residuals + analytic Jacobians (see numpy twin for layout)."""
    cdef double[:, :, ::1] r = np.ascontiguousarray(rmats, dtype=np.float64)
    cdef double[:, ::1] t = np.ascontiguousarray(tvecs, dtype=np.float64)
    cdef double[:, ::1] x = np.ascontiguousarray(points, dtype=np.float64)
    cdef long long[::1] ci = np.ascontiguousarray(cam_idx, dtype=np.int64)
    cdef long long[::1] pi = np.ascontiguousarray(pt_idx, dtype=np.int64)
    cdef double[:, ::1] ob = np.ascontiguousarray(obs, dtype=np.float64)
    cdef Py_ssize_t n = ci.shape[0]

    res_arr = np.empty((n, 2), dtype=np.float64)
    jpose_arr = np.empty((n, 2, 6), dtype=np.float64)
    jpoint_arr = np.empty((n, 2, 3), dtype=np.float64)
    jf_arr = np.empty((n, 2), dtype=np.float64) if want_focal else None
    z_arr = np.empty(n, dtype=np.float64)

    cdef double[:, ::1] res = res_arr
    cdef double[:, :, ::1] jpose = jpose_arr
    cdef double[:, :, ::1] jpoint = jpoint_arr
    cdef double[:, ::1] jf = jf_arr if want_focal else res_arr  # dummy alias when unused
    cdef double[::1] zv = z_arr

    cdef Py_ssize_t k, c, p, col
    cdef double rx0, rx1, rx2, xc0, xc1, xc2, iz, a00, a02, a11, a12
    cdef double s01, s02, s10, s12, s20, s21
    with nogil:
        for k in range(n):
            c = <Py_ssize_t> ci[k]
            p = <Py_ssize_t> pi[k]
            rx0 = r[c, 0, 0] * x[p, 0] + r[c, 0, 1] * x[p, 1] + r[c, 0, 2] * x[p, 2]
            rx1 = r[c, 1, 0] * x[p, 0] + r[c, 1, 1] * x[p, 1] + r[c, 1, 2] * x[p, 2]
            rx2 = r[c, 2, 0] * x[p, 0] + r[c, 2, 1] * x[p, 1] + r[c, 2, 2] * x[p, 2]
            xc0 = rx0 + t[c, 0]
            xc1 = rx1 + t[c, 1]
            xc2 = rx2 + t[c, 2]
            zv[k] = xc2
            iz = 1.0 / _safe_z(xc2)
            res[k, 0] = fx * xc0 * iz + cx - ob[k, 0]
            res[k, 1] = fy * xc1 * iz + cy - ob[k, 1]
            a00 = fx * iz
            a02 = -fx * xc0 * iz * iz
            a11 = fy * iz
            a12 = -fy * xc1 * iz * iz
            # skew(rx) entries
            s01 = -rx2; s02 = rx1
            s10 = rx2; s12 = -rx0
            s20 = -rx1; s21 = rx0
            # j_pose[:, :, :3] = -A @ skew(rx)
            jpose[k, 0, 0] = -(a02 * s20)
            jpose[k, 0, 1] = -(a00 * s01 + a02 * s21)
            jpose[k, 0, 2] = -(a00 * s02)
            jpose[k, 1, 0] = -(a11 * s10 + a12 * s20)
            jpose[k, 1, 1] = -(a12 * s21)
            jpose[k, 1, 2] = -(a11 * s12)
            # j_pose[:, :, 3:] = A
            jpose[k, 0, 3] = a00
            jpose[k, 0, 4] = 0.0
            jpose[k, 0, 5] = a02
            jpose[k, 1, 3] = 0.0
            jpose[k, 1, 4] = a11
            jpose[k, 1, 5] = a12
            # j_point = A @ R
            for col in range(3):
                jpoint[k, 0, col] = a00 * r[c, 0, col] + a02 * r[c, 2, col]
                jpoint[k, 1, col] = a11 * r[c, 1, col] + a12 * r[c, 2, col]
            if want_focal:
                jf[k, 0] = fx * xc0 * iz
                jf[k, 1] = fy * xc1 * iz
    return res_arr, jpose_arr, jpoint_arr, jf_arr, z_arr
