"""Hot numeric kernels with a compiled core and a numpy fallback.

The compiled extension is preferred when importable; set
``DYNSFM_PURE_PYTHON=1`` to force the numpy implementation. ``BACKEND``
reports which one is active ("cython" or "numpy").
"""

from __future__ import annotations

import os

if os.environ.get("DYNSFM_PURE_PYTHON", "").strip() not in ("", "0"):
    from . import _kernels_py as _impl
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_py as _impl

BACKEND: str = _impl.BACKEND
sampson_batch = _impl.sampson_batch
sampson_multi = _impl.sampson_multi
sampson_flow_map = _impl.sampson_flow_map
project_batch = _impl.project_batch
reproj_residual_jacobian = _impl.reproj_residual_jacobian

__all__ = [
    "BACKEND",
    "sampson_batch",
    "sampson_multi",
    "sampson_flow_map",
    "project_batch",
    "reproj_residual_jacobian",
]
