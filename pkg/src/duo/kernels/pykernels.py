"""Pure-numpy implementations of the hot kernels.

Mirrors the compiled extension surface exactly: 3x3 valid correlation,
3x3 same-padded convolution forward and weight gradient, separable bilinear
resize with its adjoint, and the Jacobi min-eigenvalue sweep. Agreement with
the compiled backend is held to ~1e-12 (summation order differs under BLAS).
"""

from __future__ import annotations

import math

import numpy as np

BACKEND = "python"


def correlate3x3_valid(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Valid cross-correlation of an (H, W) grid with a 3x3 kernel."""
    h, w = x.shape
    out = np.zeros((h - 2, w - 2), dtype=np.float64)
    for di in range(3):
        for dj in range(3):
            out += k[di, dj] * x[di : di + h - 2, dj : dj + w - 2]
    return out


def conv2d3x3(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Same-padded stride-1 convolution: (N,C,H,W) x (F,C,3,3) -> (N,F,H,W).

    Convention is cross-correlation (no kernel flip), tap (1,1) centered.
    """
    n, c, h, wid = x.shape
    xp = np.zeros((n, c, h + 2, wid + 2), dtype=np.float64)
    xp[:, :, 1 : 1 + h, 1 : 1 + wid] = x
    out = np.zeros((n, w.shape[0], h, wid), dtype=np.float64)
    for di in range(3):
        for dj in range(3):
            patch = xp[:, :, di : di + h, dj : dj + wid]
            out += np.einsum("nchw,fc->nfhw", patch, w[:, :, di, dj], optimize=True)
    return out


def conv2d3x3_grad_w(x: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Weight gradient of conv2d3x3: (N,C,H,W), (N,F,H,W) -> (F,C,3,3)."""
    n, c, h, wid = x.shape
    f = gy.shape[1]
    xp = np.zeros((n, c, h + 2, wid + 2), dtype=np.float64)
    xp[:, :, 1 : 1 + h, 1 : 1 + wid] = x
    gw = np.zeros((f, c, 3, 3), dtype=np.float64)
    for di in range(3):
        for dj in range(3):
            patch = xp[:, :, di : di + h, dj : dj + wid]
            gw[:, :, di, dj] = np.einsum("nchw,nfhw->fc", patch, gy, optimize=True)
    return gw


def _resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Dense (n_out, n_in) bilinear sampling operator for one axis.

    Sample i reads source coordinate (i + 0.5) * n_in / n_out - 0.5, clamped
    to [0, n_in - 1], then blends the two straddling samples.
    """
    m = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for i in range(n_out):
        pos = (i + 0.5) * scale - 0.5
        pos = min(max(pos, 0.0), n_in - 1.0)
        i0 = int(math.floor(pos))
        i1 = min(i0 + 1, n_in - 1)
        t = pos - i0
        m[i, i0] += 1.0 - t
        m[i, i1] += t
    return m


_RESIZE_CACHE: dict = {}


def _resize_matrix_cached(n_in: int, n_out: int) -> np.ndarray:
    key = (n_in, n_out)
    if key not in _RESIZE_CACHE:
        _RESIZE_CACHE[key] = _resize_matrix(n_in, n_out)
    return _RESIZE_CACHE[key]


def bilinear_resize(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample of an (H, W) grid to (out_h, out_w)."""
    rh = _resize_matrix_cached(x.shape[0], out_h)
    rw = _resize_matrix_cached(x.shape[1], out_w)
    return rh @ x @ rw.T


def bilinear_resize_adjoint(gy: np.ndarray, in_h: int, in_w: int) -> np.ndarray:
    """Transpose of bilinear_resize: scatter (out_h, out_w) back to (in_h, in_w)."""
    rh = _resize_matrix_cached(in_h, gy.shape[0])
    rw = _resize_matrix_cached(in_w, gy.shape[1])
    return rh.T @ gy @ rw


def jacobi_min_eigen(a: np.ndarray, max_sweeps: int = 64) -> float:
    """Smallest eigenvalue of a symmetric matrix by cyclic Jacobi sweeps.

    Early sweeps rotate only entries above a tenth of the current largest
    off-diagonal, later sweeps take everything; converged when the largest
    off-diagonal falls below 1e-13 relative to the matrix scale.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    if n == 1:
        return float(a[0, 0])
    scale = max(1.0, float(np.max(np.abs(a))))
    for sweep in range(max_sweeps):
        off = float(np.max(np.abs(a - np.diag(np.diag(a)))))
        if off <= 1e-13 * scale:
            break
        thresh = off * 0.1 if sweep < 2 else 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= thresh or apq == 0.0:
                    continue
                app = a[p, p]
                aqq = a[q, q]
                theta = (aqq - app) / (2.0 * apq)
                if theta != 0.0:
                    t = math.copysign(1.0, theta) / (
                        abs(theta) + math.sqrt(theta * theta + 1.0)
                    )
                else:
                    t = 1.0
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rp = c * a[p] - s * a[q]
                rq = s * a[p] + c * a[q]
                a[p] = rp
                a[q] = rq
                cp = c * a[:, p] - s * a[:, q]
                cq = s * a[:, p] + c * a[:, q]
                a[:, p] = cp
                a[:, q] = cq
                a[p, q] = 0.0
                a[q, p] = 0.0
                a[p, p] = c * c * app - 2.0 * s * c * apq + s * s * aqq
                a[q, q] = s * s * app + 2.0 * s * c * apq + c * c * aqq
    return float(np.min(np.diag(a)))
