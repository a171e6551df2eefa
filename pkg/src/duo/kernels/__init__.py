"""Hot numeric kernels with a compiled core and a pure-numpy fallback.

The compiled extension (duo.kernels._ckernels, built from Cython) is
preferred when importable; otherwise the numpy implementations take over.
Set DUO_KERNELS=python or DUO_KERNELS=compiled to force a backend; the
compiled setting raises if the extension is missing.
"""

from __future__ import annotations

import os

from . import pykernels as _py

_requested = os.environ.get("DUO_KERNELS", "auto")
if _requested not in ("auto", "compiled", "python"):
    raise ValueError(
        f"DUO_KERNELS={_requested!r}; expected 'auto', 'compiled', or 'python'"
    )

if _requested == "python":
    _impl = _py
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        if _requested == "compiled":
            raise
        _impl = _py

BACKEND = _impl.BACKEND
correlate3x3_valid = _impl.correlate3x3_valid
conv2d3x3 = _impl.conv2d3x3
conv2d3x3_grad_w = _impl.conv2d3x3_grad_w
jacobi_min_eigen = _impl.jacobi_min_eigen
bilinear_resize = _impl.bilinear_resize
bilinear_resize_adjoint = _impl.bilinear_resize_adjoint
if _requested == "auto":
    # the bilinear pair is faster as cached matrices + BLAS matmuls, so
    # auto keeps the numpy implementation even when the extension loads
    bilinear_resize = _py.bilinear_resize
    bilinear_resize_adjoint = _py.bilinear_resize_adjoint
