"""Multi-head depth fusion and uncertainty-weighted depth regression.

Each detection carries K depth hypotheses z_k with scale parameters
sigma_k. The fused estimate is the inverse-sigma weighted mean; the
regression loss |z - z*|/sigma + log sigma is stationary in sigma exactly
at sigma = |z - z*|.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Var


@dataclass(frozen=True)
class HeadSet:
    """Depth hypotheses of one detection: z and sigma, both length K > 0."""

    z: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "sigma", sigma)
        if z.ndim != 1 or z.size == 0 or z.shape != sigma.shape:
            raise ad.ContractViolation(
                f"head arrays must be matching non-empty vectors, got {z.shape} / {sigma.shape}"
            )
        if not np.all(np.isfinite(z)) or not np.all(np.isfinite(sigma)):
            raise ad.ContractViolation("head values must be finite")
        if np.any(sigma <= 0.0):
            raise ad.ContractViolation(f"sigma must be positive, got min {sigma.min()}")


def fuse_depth(z, sigma):
    """Inverse-sigma weighted mean: (sum z_k / sigma_k) / (sum 1 / sigma_k)."""
    inv = 1.0 / sigma
    return (z * inv).sum() / inv.sum()


def fuse_headset(heads: HeadSet) -> float:
    return float(fuse_depth(heads.z, heads.sigma))


def depth_uncertainty_metric(sigma) -> float:
    """Mean log sigma across heads; the geometric-branch uncertainty score."""
    sv = ad.value_of(sigma)
    if np.any(sv <= 0.0):
        raise ad.ContractViolation(f"sigma must be positive, got min {sv.min()}")
    return float(np.mean(np.log(sv)))


def uncertainty_regression_loss(z, sigma, z_star):
    """Sum over heads of |z_k - z*| / sigma_k + log sigma_k.

    Differentiable when z / sigma are Vars; z_star may be a constant or Var.
    """
    resid = ad.absolute(z - z_star)
    return (resid / sigma + ad.log(sigma)).sum()


def self_fused_regression_loss(z, sigma):
    """The regression loss against the fused estimate held out of the graph.

    z* is the inverse-sigma weighted mean of the current head values,
    detached, so gradients only chase the pseudo-label instead of moving it.
    """
    z_val = ad.value_of(z)
    s_val = ad.value_of(sigma)
    z_star = fuse_depth(z_val, s_val)
    if isinstance(z, Var) or isinstance(sigma, Var):
        z_star = ad.const(z_star)
    return uncertainty_regression_loss(z, sigma, z_star)
