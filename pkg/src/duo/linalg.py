"""Dense linear algebra primitives: pivoted elimination and a Jacobi eigensolver.

Both are written against plain float64 arrays. The Jacobi sweep loop has a
compiled twin in duo.kernels; this module holds the reference implementations
and the public entry points.
"""

from __future__ import annotations

import numpy as np

PIVOT_EPS = 1e-14
JACOBI_DIM_LIMIT = 64
SYMMETRY_TOL = 1e-9


class SingularMatrixError(ValueError):
    """Raised when elimination meets a pivot below PIVOT_EPS in magnitude."""


def solve_linear(a, b) -> np.ndarray:
    """Solve a x = b by Gaussian elimination with partial pivoting.

    a: (n, n), b: (n,). Raises SingularMatrixError if the largest available
    pivot in any column falls below 1e-14 in absolute value.
    """
    a = np.array(a, dtype=np.float64)
    b = np.array(b, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got {a.shape}")
    n = a.shape[0]
    if b.shape != (n,):
        raise ValueError(f"rhs shape {b.shape} does not match matrix {a.shape}")
    for col in range(n):
        piv = col + int(np.argmax(np.abs(a[col:, col])))
        if abs(a[piv, col]) < PIVOT_EPS:
            raise SingularMatrixError(
                f"pivot {a[piv, col]:.3e} below {PIVOT_EPS:g} in column {col}"
            )
        if piv != col:
            a[[col, piv]] = a[[piv, col]]
            b[[col, piv]] = b[[piv, col]]
        inv = 1.0 / a[col, col]
        if col + 1 < n:
            factors = a[col + 1 :, col] * inv
            a[col + 1 :, col:] -= factors[:, None] * a[col, col:]
            b[col + 1 :] -= factors * b[col]
    x = np.empty(n, dtype=np.float64)
    for row in range(n - 1, -1, -1):
        x[row] = (b[row] - a[row, row + 1 :] @ x[row + 1 :]) / a[row, row]
    return x


def min_eigen_sym(a, max_sweeps: int = 64) -> float:
    """Smallest eigenvalue of a symmetric matrix via cyclic Jacobi rotations.

    Accepts dimensions up to 64 and asymmetry up to 1e-9 in max-abs terms
    (the average of a and a^T is diagonalized). Absolute accuracy is driven
    well below 1e-9 by the off-diagonal convergence threshold.
    """
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got {a.shape}")
    n = a.shape[0]
    if n > JACOBI_DIM_LIMIT:
        raise ValueError(f"dimension {n} exceeds Jacobi limit {JACOBI_DIM_LIMIT}")
    asym = float(np.max(np.abs(a - a.T))) if n > 1 else 0.0
    if asym > SYMMETRY_TOL:
        raise ValueError(f"matrix asymmetry {asym:.3e} exceeds {SYMMETRY_TOL:g}")
    a = 0.5 * (a + a.T)
    if n == 1:
        return float(a[0, 0])
    from . import kernels

    return float(kernels.jacobi_min_eigen(a, max_sweeps))
