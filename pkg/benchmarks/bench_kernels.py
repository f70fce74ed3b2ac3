"""Micro-benchmark comparing the compiled and numpy kernel backends.

Both implementations are imported side by side (the package-level selection
via ``DYNSFM_PURE_PYTHON`` is bypassed), each hot kernel is timed on
realistic problem sizes, and the outputs are cross-checked so a speedup
never hides a numerical regression.

Usage::

    python benchmarks/bench_kernels.py [--repeats 5] [--quick]
"""

from __future__ import annotations

import argparse
import timeit
from typing import Callable

import numpy as np

from dynsfm.kernels import _kernels_py

try:
    from dynsfm.kernels import _kernels as _compiled
except ImportError:  # pragma: no cover - depends on build_ext having run
    _compiled = None


def _rotation_from_axis(omega: np.ndarray) -> np.ndarray:
    angle = float(np.linalg.norm(omega))
    if angle < 1e-12:
        return np.eye(3)
    k = omega / angle
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * kx + (1 - np.cos(angle)) * (kx @ kx)


def _random_fundamental(rng: np.random.Generator) -> np.ndarray:
    f = rng.standard_normal((3, 3))
    u, s, vt = np.linalg.svd(f)
    s[2] = 0.0
    f = u @ np.diag(s) @ vt
    return f / np.abs(f).max()


def _make_cases(quick: bool) -> dict[str, tuple[tuple, dict]]:
    rng = np.random.default_rng(7)
    n = 2_000 if quick else 20_000
    h, w = (120, 160) if quick else (480, 640)
    n_cams, n_pts = 40, 800
    n_obs = 2_000 if quick else 12_000

    f = _random_fundamental(rng)
    fs = np.stack([_random_fundamental(rng) for _ in range(12)])
    pts1 = rng.uniform(0.0, 640.0, (n, 2))
    pts2 = pts1 + rng.normal(0.0, 2.0, (n, 2))
    flow = rng.normal(0.0, 3.0, (h, w, 2))

    # mild rotations keep every point at positive depth, so the diff column
    # reflects agreement on well-posed inputs rather than 1/z blow-ups
    axes = rng.normal(0.0, 0.08, (n_cams, 3))
    rmats = np.stack([_rotation_from_axis(a) for a in axes])
    tvecs = rng.normal(0.0, 0.5, (n_cams, 3))
    points = rng.uniform(-2.0, 2.0, (n_pts, 3)) + np.array([0.0, 0.0, 8.0])
    cam_idx = rng.integers(0, n_cams, n_obs)
    pt_idx = rng.integers(0, n_pts, n_obs)
    obs = rng.uniform(0.0, 640.0, (n_obs, 2))

    return {
        "sampson_batch": ((f, pts1, pts2), {}),
        "sampson_multi": ((fs, pts1, pts2), {}),
        "sampson_flow_map": ((f, flow), {}),
        "project_batch": ((rmats, tvecs, points, cam_idx, pt_idx, 600.0, 600.0, 320.0, 240.0), {}),
        "reproj_residual_jacobian": (
            (rmats, tvecs, points, cam_idx, pt_idx, obs, 600.0, 600.0, 320.0, 240.0, True),
            {},
        ),
    }


def _max_abs_diff(a: object, b: object) -> float:
    if a is None and b is None:
        return 0.0
    if isinstance(a, tuple):
        return max(_max_abs_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b)))) if np.size(a) else 0.0


def _time(fn: Callable, args: tuple, kwargs: dict, repeats: int) -> float:
    return min(timeit.repeat(lambda: fn(*args, **kwargs), number=1, repeat=repeats))


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5, help="timing repeats (best-of)")
    parser.add_argument("--quick", action="store_true", help="smaller problem sizes")
    args = parser.parse_args()

    if _compiled is None:
        print("compiled backend unavailable — run `python setup.py build_ext --inplace`")
        print("timing the numpy backend only\n")

    cases = _make_cases(args.quick)
    header = f"{'kernel':<26} {'numpy (ms)':>12} {'cython (ms)':>12} {'speedup':>9} {'max |diff|':>12}"
    print(header)
    print("-" * len(header))
    for name, (call_args, call_kwargs) in cases.items():
        py_fn = getattr(_kernels_py, name)
        t_py = _time(py_fn, call_args, call_kwargs, args.repeats)
        if _compiled is None:
            print(f"{name:<26} {t_py * 1e3:>12.3f} {'-':>12} {'-':>9} {'-':>12}")
            continue
        cy_fn = getattr(_compiled, name)
        t_cy = _time(cy_fn, call_args, call_kwargs, args.repeats)
        diff = _max_abs_diff(py_fn(*call_args, **call_kwargs), cy_fn(*call_args, **call_kwargs))
        print(
            f"{name:<26} {t_py * 1e3:>12.3f} {t_cy * 1e3:>12.3f}"
            f" {t_py / t_cy:>8.2f}x {diff:>12.3g}"
        )


if __name__ == "__main__":
    main()
