"""Surface normals from depth and the edge-weighted consistency loss.

Depth gradients come from 3x3 Sobel cross-correlation with replicate
padding; normals are (-gx, -gy, 1) normalized. The loss penalizes the
squared second difference of the normal field in both grid directions,
attenuated where the paired intensity image has strong edges. All entry
points accept either plain (H, W) arrays or autodiff Vars for the depth;
the image is always a constant in the gradient path.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Var

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]) / 8.0
SOBEL_Y = SOBEL_X.T.copy()


def _check_grid(x, name: str) -> None:
    v = ad.value_of(x)
    if v.ndim != 2 or v.shape[0] < 3 or v.shape[1] < 3:
        raise ad.ContractViolation(f"{name} must be at least 3x3, got {v.shape}")


def luma(image: np.ndarray) -> np.ndarray:
    """Rec.601 luma of an (H, W, 3) image."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ad.ContractViolation(f"expected (H, W, 3) image, got {image.shape}")
    return 0.299 * image[:, :, 0] + 0.587 * image[:, :, 1] + 0.114 * image[:, :, 2]


def sobel_gradients(depth):
    """Replicate-padded Sobel derivatives (gx, gy) of an (H, W) grid."""
    _check_grid(depth, "depth")
    dp = ad.pad_replicate(depth, 1)
    gx = ad.correlate3x3(dp, SOBEL_X)
    gy = ad.correlate3x3(dp, SOBEL_Y)
    return gx, gy


def normal_components(gx, gy):
    """Unit surface normal components (nx, ny, nz) from depth gradients."""
    denom = ad.sqrt(gx * gx + gy * gy + 1.0)
    return -gx / denom, -gy / denom, 1.0 / denom


def normal_field(depth: np.ndarray) -> np.ndarray:
    """Unit normals of a plain depth grid as an (H, W, 3) array."""
    gx, gy = sobel_gradients(np.asarray(depth, dtype=np.float64))
    nx, ny, nz = normal_components(gx, gy)
    return np.stack([nx, ny, nz], axis=-1)


def smoothness_terms(nx, ny, nz):
    """Second-difference energies (psi_x, psi_y) of the normal field.

    psi_x(u, v) = || 2 N(u, v) - N(u+1, v) - N(u-1, v) ||^2 with u the
    horizontal axis and replicate boundary handling; psi_y likewise
    vertically.
    """
    psi_x = None
    psi_y = None
    for comp in (nx, ny, nz):
        cp = ad.pad_replicate(comp, 1)
        center = cp[1:-1, 1:-1]
        dx = 2.0 * center - cp[1:-1, 2:] - cp[1:-1, :-2]
        dy = 2.0 * center - cp[2:, 1:-1] - cp[:-2, 1:-1]
        sx = dx * dx
        sy = dy * dy
        psi_x = sx if psi_x is None else psi_x + sx
        psi_y = sy if psi_y is None else psi_y + sy
    return psi_x, psi_y


def edge_weight(image_luma):
    """Edge-stopping weight exp(-|grad I|) in (0, 1], from Sobel magnitude."""
    _check_grid(image_luma, "luma")
    gx, gy = sobel_gradients(image_luma)
    return ad.exp(-ad.sqrt(gx * gx + gy * gy))


def normal_consistency_loss(depth, image_luma):
    """Per-pixel edge-weighted normal smoothness grid, same shape as depth.

    depth may be a Var; the luma grid is constant in the gradient path.
    """
    _check_grid(depth, "depth")
    dval = ad.value_of(depth)
    ival = ad.value_of(image_luma)
    if dval.shape != ival.shape:
        raise ad.ContractViolation(
            f"depth {dval.shape} and luma {ival.shape} shapes differ"
        )
    gx, gy = sobel_gradients(depth)
    nx, ny, nz = normal_components(gx, gy)
    psi_x, psi_y = smoothness_terms(nx, ny, nz)
    w = edge_weight(ival)
    if isinstance(depth, Var):
        w = ad.const(w)
    return (psi_x + psi_y) * w
